"""Desk-scale meta-set synthesis.

Builds everything the experiment harness consumes: a separable Gaussian toy
task, a small classifier trained on it, parameterized distribution-shift
primitives, and a workspace of transformed sample sets with exact
ground-truth accuracies.

Sample sets destined for TRAIN_META/VAL_META and for TEST_META draw their
transform parameters from disjoint sub-ranges, so the synthesis methods for
regression data and for evaluation data never overlap.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, InputError, TrainingError
from .featureset import FeatureSet, save as save_featureset
from .optim import Adam

TRAIN_META = "TRAIN_META"
VAL_META = "VAL_META"
TEST_META = "TEST_META"
SPLITS = (TRAIN_META, VAL_META, TEST_META)

ADD_NOISE = "ADD_NOISE"
SCALE = "SCALE"
SHIFT = "SHIFT"
ROTATE = "ROTATE"
DROP_DIMS = "DROP_DIMS"
CLASS_PRIOR = "CLASS_PRIOR"

_LEAKY = 0.01

# Hard parameter bounds per primitive; every configured range must sit inside.
_HARD_RANGES: Dict[str, Dict[str, Tuple[float, float]]] = {
    ADD_NOISE: {"sigma": (0.1, 2.0)},
    SCALE: {"factor": (0.5, 1.8)},
    SHIFT: {"magnitude": (0.2, 3.0)},
    ROTATE: {"pair_count": (1.0, math.inf), "angle_deg": (5.0, 60.0)},
    DROP_DIMS: {"fraction": (0.05, 0.4)},
    CLASS_PRIOR: {},
}

# Default draw ranges: the "meta" group feeds TRAIN_META and VAL_META, the
# "test" group feeds TEST_META.  Every interval is disjoint from its
# counterpart; severity directions are mixed (noise gets harsher at test
# time, shift and dimension dropping get milder) so test accuracies stay
# inside the span the regressor saw.  CLASS_PRIOR has no severity knob and
# is therefore meta-only.
DEFAULT_RANGES: Dict[str, Dict[str, Dict[str, Tuple[float, float]]]] = {
    "meta": {
        ADD_NOISE: {"sigma": (0.1, 1.0)},
        SCALE: {"factor": (0.5, 1.25)},
        SHIFT: {"magnitude": (1.2, 3.0)},
        ROTATE: {"pair_count": (1, 8), "angle_deg": (25.0, 60.0)},
        DROP_DIMS: {"fraction": (0.15, 0.4)},
        CLASS_PRIOR: {},
    },
    "test": {
        ADD_NOISE: {"sigma": (1.2, 2.0)},
        SCALE: {"factor": (1.35, 1.8)},
        SHIFT: {"magnitude": (0.2, 1.0)},
        ROTATE: {"pair_count": (9, 16), "angle_deg": (5.0, 20.0)},
        DROP_DIMS: {"fraction": (0.05, 0.1)},
    },
}


@dataclass(frozen=True)
class ToyTask:
    """A Gaussian-blob classification problem with known geometry.

    Class means are drawn once from a seeded Gaussian and rescaled so the
    closest pair sits exactly ``separation`` apart (class covariance is the
    identity, so separation is in noise-sigma units).
    """

    raw_dim: int = 32
    n_classes: int = 10
    n_train: int = 5000
    n_test: int = 2000
    separation: float = 4.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.raw_dim < 2:
            raise ConfigError(f"raw_dim must be >= 2, got {self.raw_dim}")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("draw sizes must be >= 1")
        if not self.separation > 0.0:
            raise ConfigError(f"separation must be positive, got {self.separation}")

    @property
    def class_means(self) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(0,)))
        means = rng.normal(size=(self.n_classes, self.raw_dim))
        diffs = means[:, None, :] - means[None, :, :]
        dists = np.sqrt((diffs**2).sum(axis=2))
        closest = dists[np.triu_indices(self.n_classes, k=1)].min()
        return means * (self.separation / closest)

    def to_dict(self) -> dict:
        return {
            "raw_dim": self.raw_dim,
            "n_classes": self.n_classes,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "separation": self.separation,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(data: dict) -> "ToyTask":
        unknown = set(data) - set(ToyTask.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown task keys: {sorted(unknown)}")
        return ToyTask(**data)


def draw_split(task: ToyTask, n: int, stream: int) -> Tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` labeled points; ``stream`` separates train (0) from test (1)."""
    rng = np.random.default_rng(np.random.SeedSequence(task.seed, spawn_key=(1, stream)))
    labels = rng.integers(0, task.n_classes, size=n)
    points = task.class_means[labels] + rng.standard_normal((n, task.raw_dim))
    return points, labels


@dataclass
class ToyClassifier:
    """One-hidden-layer net whose hidden activations are the feature map."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    seed: int
    clean_test_accuracy: float

    @property
    def hidden_dim(self) -> int:
        return int(self.w1.shape[1])

    @property
    def n_classes(self) -> int:
        return int(self.w2.shape[1])

    def features(self, raw: np.ndarray) -> np.ndarray:
        """Hidden-layer activations (the representation every module consumes)."""
        z = np.asarray(raw, dtype=np.float64) @ self.w1 + self.b1
        return np.where(z > 0.0, z, _LEAKY * z)

    def softmax_outputs(self, raw: np.ndarray) -> np.ndarray:
        logits = self.features(raw) @ self.w2 + self.b2
        logits -= logits.max(axis=1, keepdims=True)
        exp = np.exp(logits)
        return exp / exp.sum(axis=1, keepdims=True)


def _accuracy_from_softmax(softmax: np.ndarray, labels: np.ndarray) -> Tuple[int, int]:
    """Exact correct/total fraction, using the same float32 values that get
    stored on disk so recomputation from a saved file agrees bit for bit."""
    preds = np.asarray(softmax, dtype=np.float32).argmax(axis=1)
    return int((preds == labels).sum()), int(labels.shape[0])


def _train_classifier_once(
    task: ToyTask, seed: int, hidden_dim: int, learning_rate: float
) -> ToyClassifier:
    train_x, train_y = draw_split(task, task.n_train, stream=0)
    test_x, test_y = draw_split(task, task.n_test, stream=1)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))

    d, h, c = task.raw_dim, hidden_dim, task.n_classes
    w1 = rng.normal(0.0, math.sqrt(2.0 / d), size=(d, h))
    b1 = rng.normal(0.0, 0.01, size=h)
    w2 = rng.normal(0.0, math.sqrt(2.0 / h), size=(h, c))
    b2 = rng.normal(0.0, 0.01, size=c)
    params = [w1, b1, w2, b2]
    optimizer = Adam(params, learning_rate=learning_rate)

    onehot = np.eye(c)[train_y]
    batch = 128
    for _ in range(30):
        perm = rng.permutation(task.n_train)
        for start in range(0, task.n_train, batch):
            idx = perm[start : start + batch]
            x = train_x[idx]
            z1 = x @ w1 + b1
            hid = np.where(z1 > 0.0, z1, _LEAKY * z1)
            logits = hid @ w2 + b2
            logits -= logits.max(axis=1, keepdims=True)
            exp = np.exp(logits)
            probs = exp / exp.sum(axis=1, keepdims=True)
            dlogits = (probs - onehot[idx]) / idx.shape[0]
            gw2 = hid.T @ dlogits
            gb2 = dlogits.sum(axis=0)
            dhid = dlogits @ w2.T
            dz1 = dhid * np.where(z1 > 0.0, 1.0, _LEAKY)
            gw1 = x.T @ dz1
            gb1 = dz1.sum(axis=0)
            optimizer.step(params, [gw1, gb1, gw2, gb2])

    clf = ToyClassifier(w1=w1, b1=b1, w2=w2, b2=b2, seed=seed, clean_test_accuracy=0.0)
    num, den = _accuracy_from_softmax(clf.softmax_outputs(test_x), test_y)
    clf.clean_test_accuracy = num / den
    return clf


def train_toy_classifier(task: ToyTask, seed: int = 0, hidden_dim: int = 64) -> ToyClassifier:
    """Train the feature-producing classifier; deterministic per seed.

    Aims for >= 95% clean test accuracy; below 80% it retries once with half
    the learning rate, and failing that raises, since the task configuration
    itself must be broken.
    """
    clf = _train_classifier_once(task, seed, hidden_dim, learning_rate=1e-2)
    if clf.clean_test_accuracy < 0.80:
        clf = _train_classifier_once(task, seed, hidden_dim, learning_rate=5e-3)
    if clf.clean_test_accuracy < 0.80:
        raise TrainingError(
            f"classifier reached only {clf.clean_test_accuracy:.3f} clean accuracy "
            "after retry; task configuration looks unlearnable"
        )
    return clf


@dataclass(frozen=True)
class PrimitiveSpec:
    """One shift primitive with its parameters and private random seed."""

    kind: str
    params: Dict[str, float]
    seed: int = 0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "seed": self.seed}

    @staticmethod
    def from_dict(data: dict) -> "PrimitiveSpec":
        return PrimitiveSpec(
            kind=str(data["kind"]),
            params={k: v for k, v in data.get("params", {}).items()},
            seed=int(data.get("seed", 0)),
        )


@dataclass(frozen=True)
class TransformSpec:
    """An ordered list of up to 3 primitives; empty means identity."""

    primitives: Tuple[PrimitiveSpec, ...] = ()

    def to_dict(self) -> dict:
        return {"primitives": [p.to_dict() for p in self.primitives]}

    @staticmethod
    def from_dict(data: dict) -> "TransformSpec":
        return TransformSpec(
            primitives=tuple(PrimitiveSpec.from_dict(p) for p in data.get("primitives", ()))
        )


def validate_spec(spec: TransformSpec, raw_dim: int) -> None:
    """Reject primitives with out-of-bounds parameters or unknown kinds."""
    if len(spec.primitives) > 3:
        raise ConfigError(f"at most 3 primitives per spec, got {len(spec.primitives)}")
    for prim in spec.primitives:
        if prim.kind not in _HARD_RANGES:
            raise ConfigError(f"unknown primitive kind {prim.kind!r}")
        hard = _HARD_RANGES[prim.kind]
        unknown = set(prim.params) - set(hard)
        if unknown:
            raise ConfigError(f"{prim.kind}: unknown parameters {sorted(unknown)}")
        missing = set(hard) - set(prim.params)
        if missing:
            raise ConfigError(f"{prim.kind}: missing parameters {sorted(missing)}")
        for name, value in prim.params.items():
            lo, hi = hard[name]
            if not lo <= float(value) <= hi:
                raise ConfigError(
                    f"{prim.kind}.{name}={value} outside allowed [{lo}, {hi}]"
                )
        if prim.kind == ROTATE:
            pairs = int(prim.params["pair_count"])
            if pairs != prim.params["pair_count"] or pairs < 1 or pairs > raw_dim // 2:
                raise ConfigError(
                    f"ROTATE.pair_count must be an integer in [1, {raw_dim // 2}], "
                    f"got {prim.params['pair_count']}"
                )


def _apply_primitive(
    raw: np.ndarray, labels: np.ndarray, prim: PrimitiveSpec
) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(prim.seed)
    d = raw.shape[1]
    if prim.kind == ADD_NOISE:
        return raw + rng.normal(0.0, prim.params["sigma"], size=raw.shape), labels
    if prim.kind == SCALE:
        return raw * prim.params["factor"], labels
    if prim.kind == SHIFT:
        direction = rng.normal(size=d)
        direction /= np.linalg.norm(direction)
        return raw + prim.params["magnitude"] * direction, labels
    if prim.kind == ROTATE:
        pairs = int(prim.params["pair_count"])
        theta = math.radians(prim.params["angle_deg"])
        axes = rng.permutation(d)[: 2 * pairs]
        out = raw.copy()
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        for p in range(pairs):
            i, j = int(axes[2 * p]), int(axes[2 * p + 1])
            xi, xj = out[:, i].copy(), out[:, j].copy()
            out[:, i] = cos_t * xi - sin_t * xj
            out[:, j] = sin_t * xi + cos_t * xj
        return out, labels
    if prim.kind == DROP_DIMS:
        count = max(1, int(round(prim.params["fraction"] * d)))
        dims = rng.choice(d, size=count, replace=False)
        out = raw.copy()
        out[:, dims] = 0.0
        return out, labels
    if prim.kind == CLASS_PRIOR:
        return _resample_class_prior(raw, labels, rng)
    raise ConfigError(f"unknown primitive kind {prim.kind!r}")


def _resample_class_prior(
    raw: np.ndarray, labels: np.ndarray, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """Resample rows with replacement to Dirichlet(1)-drawn class proportions,
    keeping the total row count fixed (largest-remainder apportionment)."""
    n = raw.shape[0]
    present = np.unique(labels)
    props = rng.dirichlet(np.ones(present.size))
    ideal = props * n
    counts = np.floor(ideal).astype(int)
    remainder = n - counts.sum()
    order = np.argsort(-(ideal - counts), kind="stable")
    counts[order[:remainder]] += 1

    rows: List[np.ndarray] = []
    for cls, count in zip(present, counts):
        pool = np.where(labels == cls)[0]
        if count > 0:
            rows.append(rng.choice(pool, size=count, replace=True))
    chosen = np.concatenate(rows) if rows else np.array([], dtype=int)
    chosen = chosen[rng.permutation(chosen.shape[0])]
    return raw[chosen], labels[chosen]


def apply_transform(
    raw: np.ndarray, labels: np.ndarray, spec: TransformSpec
) -> Tuple[np.ndarray, np.ndarray]:
    """Apply the primitives in order; fully deterministic per primitive seed."""
    raw = np.asarray(raw, dtype=np.float64)
    labels = np.asarray(labels)
    if raw.ndim != 2 or labels.shape != (raw.shape[0],):
        raise InputError(f"incompatible raw {raw.shape} / labels {labels.shape}")
    validate_spec(spec, raw.shape[1])
    for prim in spec.primitives:
        raw, labels = _apply_primitive(raw, labels, prim)
    return raw, labels


def validate_ranges(ranges: dict, raw_dim: int) -> None:
    """Check configured draw ranges: inside hard bounds, with disjoint
    meta-vs-test intervals for every primitive present in both groups."""
    for group in ("meta", "test"):
        if group not in ranges or not ranges[group]:
            raise ConfigError(f"ranges must define a non-empty {group!r} group")
        for kind, params in ranges[group].items():
            if kind not in _HARD_RANGES:
                raise ConfigError(f"unknown primitive kind {kind!r} in ranges")
            hard = _HARD_RANGES[kind]
            if set(params) != set(hard):
                raise ConfigError(
                    f"{group}/{kind}: parameters {sorted(params)} != expected {sorted(hard)}"
                )
            for name, (lo, hi) in params.items():
                if not (hard[name][0] <= lo <= hi <= hard[name][1]):
                    raise ConfigError(
                        f"{group}/{kind}.{name}=[{lo}, {hi}] outside hard "
                        f"[{hard[name][0]}, {hard[name][1]}] or empty"
                    )
            if kind == ROTATE:
                lo, hi = params["pair_count"]
                if hi > raw_dim // 2:
                    raise ConfigError(
                        f"{group}/ROTATE.pair_count upper bound {hi} > {raw_dim // 2}"
                    )
    if CLASS_PRIOR in ranges["test"]:
        raise ConfigError(
            "CLASS_PRIOR has no severity parameter to keep disjoint and is "
            "restricted to the meta group"
        )
    for kind in set(ranges["meta"]) & set(ranges["test"]):
        for name in ranges["meta"][kind]:
            alo, ahi = ranges["meta"][kind][name]
            blo, bhi = ranges["test"][kind][name]
            if not (ahi < blo or bhi < alo):
                raise ConfigError(
                    f"{kind}.{name}: meta [{alo}, {ahi}] overlaps test [{blo}, {bhi}]"
                )


@dataclass(frozen=True)
class SampleSetRecord:
    """Manifest entry for one generated sample set."""

    set_id: str
    path: str
    split: str
    spec: TransformSpec
    accuracy_num: int
    accuracy_den: int

    @property
    def accuracy(self) -> float:
        return self.accuracy_num / self.accuracy_den

    def to_dict(self) -> dict:
        return {
            "id": self.set_id,
            "path": self.path,
            "split": self.split,
            "spec": self.spec.to_dict(),
            "accuracy_num": self.accuracy_num,
            "accuracy_den": self.accuracy_den,
        }

    @staticmethod
    def from_dict(data: dict) -> "SampleSetRecord":
        return SampleSetRecord(
            set_id=str(data["id"]),
            path=str(data["path"]),
            split=str(data["split"]),
            spec=TransformSpec.from_dict(data["spec"]),
            accuracy_num=int(data["accuracy_num"]),
            accuracy_den=int(data["accuracy_den"]),
        )


def _draw_spec(
    rng: np.random.Generator, group_ranges: dict, raw_dim: int
) -> TransformSpec:
    kinds = sorted(group_ranges)
    n_prims = int(rng.integers(1, min(3, len(kinds)) + 1))
    chosen = rng.choice(len(kinds), size=n_prims, replace=False)
    prims = []
    for ki in chosen:
        kind = kinds[int(ki)]
        params: Dict[str, float] = {}
        for name in sorted(group_ranges[kind]):
            lo, hi = group_ranges[kind][name]
            if kind == ROTATE and name == "pair_count":
                params[name] = int(rng.integers(int(lo), int(hi) + 1))
            else:
                params[name] = float(rng.uniform(lo, hi))
        prims.append(PrimitiveSpec(kind=kind, params=params, seed=int(rng.integers(2**31 - 1))))
    spec = TransformSpec(primitives=tuple(prims))
    validate_spec(spec, raw_dim)
    return spec


def generate_sets(
    classifier: ToyClassifier,
    task: ToyTask,
    workspace: "str | Path",
    n_train_meta: int = 200,
    n_val_meta: int = 50,
    n_test_meta: int = 50,
    seed: int = 0,
    ranges: Optional[dict] = None,
) -> List[SampleSetRecord]:
    """Populate ``workspace`` with the source set, sample sets, and manifest.

    Every record gets a freshly drawn transform spec (meta vs test ranges by
    split), hidden-layer features + softmax + labels in one file, and an
    exact ground-truth accuracy.  All randomness hangs off ``seed``, so two
    runs produce bit-identical workspaces.
    """
    if min(n_train_meta, n_val_meta, n_test_meta) < 1:
        raise ConfigError("set counts must all be >= 1")
    ranges = ranges if ranges is not None else DEFAULT_RANGES
    validate_ranges(ranges, task.raw_dim)

    workspace = Path(workspace)
    (workspace / "sets").mkdir(parents=True, exist_ok=True)

    train_x, train_y = draw_split(task, task.n_train, stream=0)
    test_x, test_y = draw_split(task, task.n_test, stream=1)

    source = FeatureSet(
        features=classifier.features(train_x).astype(np.float32),
        softmax=classifier.softmax_outputs(train_x).astype(np.float32),
        labels=train_y.astype(np.int32),
        source_id="source",
    )
    save_featureset(source, workspace / "source.fset")

    splits = [TRAIN_META] * n_train_meta + [VAL_META] * n_val_meta + [TEST_META] * n_test_meta
    records: List[SampleSetRecord] = []
    for i, split in enumerate(splits):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3, i)))
        group = "test" if split == TEST_META else "meta"
        spec = _draw_spec(rng, ranges[group], task.raw_dim)
        shifted_x, shifted_y = apply_transform(test_x, test_y, spec)

        softmax = classifier.softmax_outputs(shifted_x).astype(np.float32)
        num, den = _accuracy_from_softmax(softmax, shifted_y)
        set_id = f"set_{i:04d}"
        rel_path = f"sets/{set_id}.fset"
        fs = FeatureSet(
            features=classifier.features(shifted_x).astype(np.float32),
            softmax=softmax,
            labels=shifted_y.astype(np.int32),
            source_id=set_id,
        )
        save_featureset(fs, workspace / rel_path)
        records.append(
            SampleSetRecord(
                set_id=set_id,
                path=rel_path,
                split=split,
                spec=spec,
                accuracy_num=num,
                accuracy_den=den,
            )
        )

    manifest = {
        "version": 1,
        "generator_seed": seed,
        "task": task.to_dict(),
        "classifier": {
            "seed": classifier.seed,
            "hidden_dim": classifier.hidden_dim,
            "clean_test_accuracy": classifier.clean_test_accuracy,
        },
        "counts": {TRAIN_META: n_train_meta, VAL_META: n_val_meta, TEST_META: n_test_meta},
        "ranges": ranges,
        "source_path": "source.fset",
        "records": [r.to_dict() for r in records],
    }
    tmp = workspace / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, sort_keys=True, indent=2))
    tmp.replace(workspace / "manifest.json")
    return records


def load_manifest(workspace: "str | Path") -> dict:
    from .errors import WorkspaceError

    path = Path(workspace) / "manifest.json"
    if not path.exists():
        raise WorkspaceError(f"{path} is missing; run synthesis first")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise WorkspaceError(f"{path}: manifest is not valid JSON: {exc}") from exc
