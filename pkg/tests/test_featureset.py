"""Feature-set container: invariants, binary layout, and round trips."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from autoeval.errors import FormatError, ValidationError
from autoeval.featureset import FeatureSet, load, save, validate


def _minimal_file_bytes() -> bytes:
    # magic, version 1, no flags, N=1, D=1, C=0, then float32 LE 0.5.
    return struct.pack("<4sHHIIH", b"FSET", 1, 0, 1, 1, 0) + b"\x00\x00\x00\x3f"


def test_save_minimal_set_produces_frozen_bytes(tmp_path) -> None:
    fs = FeatureSet(features=np.array([[0.5]], dtype=np.float32), source_id="x")
    path = tmp_path / "x.fset"
    save(fs, path)
    raw = path.read_bytes()
    assert len(raw) == 22
    assert raw == _minimal_file_bytes()
    assert raw[18:] == bytes([0x00, 0x00, 0x00, 0x3F])


def test_load_minimal_frozen_file(tmp_path) -> None:
    path = tmp_path / "tiny.fset"
    path.write_bytes(_minimal_file_bytes())
    fs = load(path)
    assert fs.features.shape == (1, 1)
    assert fs.features[0, 0] == np.float32(0.5)
    assert fs.softmax is None and fs.labels is None
    assert fs.source_id == "tiny"


def test_softmax_flag_and_class_count_in_header(tmp_path) -> None:
    fs = FeatureSet(
        features=np.array([[1.0]], dtype=np.float32),
        softmax=np.array([[0.2, 0.8]], dtype=np.float32),
    )
    path = tmp_path / "sm.fset"
    save(fs, path)
    magic, version, flags, n, d, c = struct.unpack_from("<4sHHIIH", path.read_bytes())
    assert magic == b"FSET" and version == 1
    assert flags == 1  # bit 0 only
    assert (n, d, c) == (1, 1, 2)


def _random_set(rng: np.random.Generator, with_softmax: bool, with_labels: bool) -> FeatureSet:
    n = int(rng.integers(1, 20))
    d = int(rng.integers(1, 8))
    c = int(rng.integers(2, 6))
    softmax = None
    if with_softmax:
        raw = rng.random((n, c)) + 1e-3
        softmax = (raw / raw.sum(axis=1, keepdims=True)).astype(np.float32)
    labels = rng.integers(0, c, size=n).astype(np.int32) if with_labels else None
    return FeatureSet(
        features=rng.normal(size=(n, d)).astype(np.float32),
        softmax=softmax,
        labels=labels,
        source_id="roundtrip",
    )


def test_round_trip_bit_exact_for_all_flag_combinations(tmp_path) -> None:
    rng = np.random.default_rng(7)
    for with_softmax in (False, True):
        for with_labels in (False, True):
            for trial in range(25):
                fs = _random_set(rng, with_softmax, with_labels)
                path = tmp_path / "roundtrip.fset"
                save(fs, path)
                back = load(path)
                assert back == fs


def test_validate_accepts_valid_set() -> None:
    fs = FeatureSet(
        features=np.array([[0.1, 0.2], [0.3, 0.4]], dtype=np.float32),
        softmax=np.array([[0.5, 0.5], [0.9, 0.1]], dtype=np.float32),
        labels=np.array([0, 1], dtype=np.int32),
    )
    assert validate(fs) == []


def test_validate_names_nan_row() -> None:
    feats = np.zeros((5, 2), dtype=np.float32)
    feats[3, 1] = np.nan
    problems = validate(FeatureSet(features=feats))
    assert len(problems) == 1
    assert "row 3" in problems[0]
    assert "finite" in problems[0]


def test_validate_flags_label_equal_to_class_count() -> None:
    fs = FeatureSet(
        features=np.ones((2, 2), dtype=np.float32),
        softmax=np.array([[0.5, 0.5], [0.5, 0.5]], dtype=np.float32),
        labels=np.array([0, 2], dtype=np.int32),
    )
    problems = validate(fs)
    assert len(problems) == 1
    assert "label-range" in problems[0]
    assert "row 1" in problems[0]


def test_validate_flags_bad_softmax_row_sum() -> None:
    fs = FeatureSet(
        features=np.ones((1, 1), dtype=np.float32),
        softmax=np.array([[0.6, 0.6]], dtype=np.float32),
    )
    problems = validate(fs)
    assert any("row-sum" in p for p in problems)


def test_save_refuses_invalid_set(tmp_path) -> None:
    fs = FeatureSet(
        features=np.ones((1, 1), dtype=np.float32),
        softmax=np.array([[0.6, 0.6]], dtype=np.float32),
    )
    with pytest.raises(ValidationError):
        save(fs, tmp_path / "bad.fset")


def test_load_rejects_bad_magic(tmp_path) -> None:
    raw = bytearray(_minimal_file_bytes())
    raw[0:4] = b"XSET"
    path = tmp_path / "bad.fset"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        load(path)


def test_load_rejects_bad_version(tmp_path) -> None:
    raw = bytearray(_minimal_file_bytes())
    raw[4:6] = struct.pack("<H", 9)
    path = tmp_path / "bad.fset"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        load(path)


def test_load_rejects_unknown_flag_bits(tmp_path) -> None:
    raw = bytearray(_minimal_file_bytes())
    raw[6:8] = struct.pack("<H", 4)
    path = tmp_path / "bad.fset"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="flag"):
        load(path)


def test_load_rejects_truncated_payload(tmp_path) -> None:
    # Header declares N*D*4 = 8 payload bytes but only 4 are present.
    raw = struct.pack("<4sHHIIH", b"FSET", 1, 0, 2, 1, 0) + b"\x00\x00\x00\x3f"
    path = tmp_path / "short.fset"
    path.write_bytes(raw)
    with pytest.raises(FormatError, match="payload"):
        load(path)


def test_load_rejects_truncated_header(tmp_path) -> None:
    path = tmp_path / "stub.fset"
    path.write_bytes(b"FSET\x01")
    with pytest.raises(FormatError, match="header"):
        load(path)


def test_load_rejects_trailing_garbage(tmp_path) -> None:
    path = tmp_path / "long.fset"
    path.write_bytes(_minimal_file_bytes() + b"\x00")
    with pytest.raises(FormatError):
        load(path)


def test_load_rejects_softmax_row_sum_violation(tmp_path) -> None:
    header = struct.pack("<4sHHIIH", b"FSET", 1, 1, 1, 1, 2)
    payload = np.array([[0.5]], dtype="<f4").tobytes()
    payload += np.array([[0.6, 0.6]], dtype="<f4").tobytes()
    path = tmp_path / "sum.fset"
    path.write_bytes(header + payload)
    with pytest.raises(ValidationError, match="row-sum"):
        load(path)


def test_load_strict_false_defers_content_checks(tmp_path) -> None:
    header = struct.pack("<4sHHIIH", b"FSET", 1, 1, 1, 1, 2)
    payload = np.array([[0.5]], dtype="<f4").tobytes()
    payload += np.array([[0.6, 0.6]], dtype="<f4").tobytes()
    path = tmp_path / "sum.fset"
    path.write_bytes(header + payload)
    fs = load(path, strict=False)
    assert any("row-sum" in p for p in validate(fs))


def test_num_classes_from_softmax_then_labels() -> None:
    with_softmax = FeatureSet(
        features=np.ones((1, 1), dtype=np.float32),
        softmax=np.array([[0.25, 0.25, 0.5]], dtype=np.float32),
    )
    assert with_softmax.num_classes == 3
    with_labels = FeatureSet(
        features=np.ones((3, 1), dtype=np.float32),
        labels=np.array([0, 4, 2], dtype=np.int32),
    )
    assert with_labels.num_classes == 5
