"""In-memory feature sets and their binary container format.

A :class:`FeatureSet` holds the penultimate-layer features a classifier
produced for one collection of inputs, with optional softmax outputs and
optional integer labels.  Arrays are stored as float32 / int32 -- the same
precision as the on-disk container -- so that ``load(save(x)) == x`` holds
bit-for-bit.  Numeric consumers promote to float64 themselves.

On-disk layout (little-endian throughout)::

    magic   4 bytes  b"FSET"
    version u16      currently 1
    flags   u16      bit 0 = softmax present, bit 1 = labels present
    n_rows  u32
    dim     u32
    classes u16      0 when neither softmax nor labels carry class info
    features float32  n_rows * dim, row-major
    softmax  float32  n_rows * classes, row-major (if flag bit 0)
    labels   int32    n_rows (if flag bit 1)

The fixed header is 18 bytes.  Unknown flag bits, wrong magic, wrong version,
or a payload whose length disagrees with the header are all format errors.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import FormatError, ValidationError

MAGIC = b"FSET"
VERSION = 1
FLAG_SOFTMAX = 1 << 0
FLAG_LABELS = 1 << 1

_HEADER = struct.Struct("<4sHHIIH")
HEADER_SIZE = _HEADER.size  # 18

_SOFTMAX_ROW_SUM_TOL = 1e-5


@dataclass(eq=False)
class FeatureSet:
    """Features (and optional softmax / labels) for one sample set.

    ``source_id`` is provenance only; it never enters the binary container
    and defaults to the file stem on load.
    """

    features: np.ndarray
    softmax: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    source_id: str = ""

    def __post_init__(self) -> None:
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        if self.softmax is not None:
            self.softmax = np.ascontiguousarray(self.softmax, dtype=np.float32)
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int32)

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1]) if self.features.ndim == 2 else 0

    @property
    def num_classes(self) -> int:
        """Class count: softmax width if present, else max label + 1, else 0."""
        if self.softmax is not None and self.softmax.ndim == 2:
            return int(self.softmax.shape[1])
        if self.labels is not None and self.labels.size:
            return int(self.labels.max()) + 1
        return 0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureSet):
            return NotImplemented

        def same(a: Optional[np.ndarray], b: Optional[np.ndarray]) -> bool:
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and bool(np.array_equal(a, b))

        return (
            same(self.features, other.features)
            and same(self.softmax, other.softmax)
            and same(self.labels, other.labels)
            and self.source_id == other.source_id
        )


def validate(fs: FeatureSet) -> List[str]:
    """Return all invariant violations, each naming field, row, and rule.

    An empty list means the set is well formed.
    """
    problems: List[str] = []
    feats = fs.features
    if feats.ndim != 2:
        problems.append(f"features: expected a 2-d array, got ndim={feats.ndim} (shape)")
        return problems
    n, d = feats.shape
    if n < 1:
        problems.append("features: need at least one row (shape)")
    if d < 1:
        problems.append("features: need at least one dimension (shape)")
    bad = np.where(~np.isfinite(feats).all(axis=1))[0]
    for row in bad:
        problems.append(f"features: row {row} contains a non-finite value (finiteness)")

    num_classes = 0
    if fs.softmax is not None:
        sm = fs.softmax
        if sm.ndim != 2 or sm.shape[0] != n:
            problems.append(
                f"softmax: expected shape ({n}, C), got {sm.shape} (shape)"
            )
        else:
            num_classes = sm.shape[1]
            if num_classes < 1:
                problems.append("softmax: need at least one class column (shape)")
            bad = np.where(~np.isfinite(sm).all(axis=1))[0]
            for row in bad:
                problems.append(f"softmax: row {row} contains a non-finite value (finiteness)")
            rng_bad = np.where(((sm < 0.0) | (sm > 1.0)).any(axis=1))[0]
            for row in rng_bad:
                problems.append(f"softmax: row {row} has an entry outside [0, 1] (range)")
            sums = sm.astype(np.float64).sum(axis=1)
            off = np.where(np.abs(sums - 1.0) > _SOFTMAX_ROW_SUM_TOL)[0]
            for row in off:
                problems.append(
                    f"softmax: row {row} sums to {sums[row]:.8f}, "
                    f"expected 1 within {_SOFTMAX_ROW_SUM_TOL} (row-sum)"
                )

    if fs.labels is not None:
        labels = fs.labels
        if labels.ndim != 1 or labels.shape[0] != n:
            problems.append(
                f"labels: expected shape ({n},), got {labels.shape} (shape)"
            )
        else:
            neg = np.where(labels < 0)[0]
            for row in neg:
                problems.append(f"labels: row {row} is negative (label-range)")
            if num_classes:
                high = np.where(labels >= num_classes)[0]
                for row in high:
                    problems.append(
                        f"labels: row {row} = {labels[row]} outside [0, {num_classes}) (label-range)"
                    )
    return problems


def _atomic_write(path: Path, payload: bytes) -> None:
    """Write via a sibling temp file + rename so readers never see partial data."""
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save(fs: FeatureSet, path: "str | Path") -> None:
    """Serialize ``fs`` to ``path``; invalid sets are refused up front."""
    problems = validate(fs)
    if problems:
        raise ValidationError("cannot save invalid feature set: " + "; ".join(problems))

    flags = 0
    if fs.softmax is not None:
        flags |= FLAG_SOFTMAX
    if fs.labels is not None:
        flags |= FLAG_LABELS
    num_classes = fs.num_classes

    parts = [
        _HEADER.pack(MAGIC, VERSION, flags, fs.n, fs.dim, num_classes),
        np.ascontiguousarray(fs.features, dtype="<f4").tobytes(),
    ]
    if fs.softmax is not None:
        parts.append(np.ascontiguousarray(fs.softmax, dtype="<f4").tobytes())
    if fs.labels is not None:
        parts.append(np.ascontiguousarray(fs.labels, dtype="<i4").tobytes())
    _atomic_write(Path(path), b"".join(parts))


def load(path: "str | Path", source_id: Optional[str] = None, strict: bool = True) -> FeatureSet:
    """Parse a container file back into a validated :class:`FeatureSet`.

    With ``strict=False`` layout problems still raise, but content-level
    violations are left to the caller (used by the `validate` subcommand to
    report every problem instead of failing on the first).
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: truncated header ({len(raw)} < {HEADER_SIZE} bytes)")
    magic, version, flags, n, d, num_classes = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if flags & ~(FLAG_SOFTMAX | FLAG_LABELS):
        raise FormatError(f"{path}: unknown flag bits 0x{flags:04x}")

    expected = n * d * 4
    if flags & FLAG_SOFTMAX:
        expected += n * num_classes * 4
    if flags & FLAG_LABELS:
        expected += n * 4
    body = raw[HEADER_SIZE:]
    if len(body) != expected:
        raise FormatError(
            f"{path}: payload is {len(body)} bytes, header declares {expected}"
        )

    offset = 0

    def take(count: int, dtype: str) -> np.ndarray:
        nonlocal offset
        out = np.frombuffer(body, dtype=dtype, count=count, offset=offset).copy()
        offset += count * 4
        return out

    features = take(n * d, "<f4").reshape(n, d)
    softmax = None
    if flags & FLAG_SOFTMAX:
        softmax = take(n * num_classes, "<f4").reshape(n, num_classes)
    labels = None
    if flags & FLAG_LABELS:
        labels = take(n, "<i4")

    fs = FeatureSet(
        features=features,
        softmax=softmax,
        labels=labels,
        source_id=source_id if source_id is not None else path.stem,
    )
    if strict:
        problems = validate(fs)
        if labels is not None and softmax is None and num_classes:
            for row in np.where(labels >= num_classes)[0]:
                problems.append(
                    f"labels: row {row} = {labels[row]} outside [0, {num_classes}) (label-range)"
                )
        if problems:
            raise ValidationError(f"{path}: " + "; ".join(problems))
    return fs
