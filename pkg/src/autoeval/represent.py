"""Semi-structured dataset representations.

A sample set of N feature rows in R^D is summarized by three fixed-size
pieces computed against a shared :class:`ReferenceFrame`:

* ``shape``    -- per-dimension histograms, D x B row-normalized fractions;
* ``clusters`` -- K cluster centers from a from-scratch k-means, reordered
  against the frame's class centroids so center k tracks class k;
* ``samples``  -- S rows picked by farthest-point sampling (or uniformly
  at random when configured), in selection order.

Concatenated row-major, the flat vector has length D*B + K*D + S*D (plus D
when the global mean is appended).  All math here is float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, InputError
from .featureset import FeatureSet

SAMPLER_FPS = "fps"
SAMPLER_RANDOM = "random"


@dataclass(frozen=True)
class RepresentationOptions:
    """Knobs for building one dataset representation.

    ``n_clusters=None`` means "use the reference frame's class count".
    """

    n_bins: int = 30
    n_clusters: Optional[int] = None
    n_samples: int = 100
    include_global_mean: bool = False
    sampler: str = SAMPLER_FPS
    sampler_seed: int = 0
    kmeans_seed: int = 0
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.n_bins < 2:
            raise ConfigError(f"n_bins must be >= 2, got {self.n_bins}")
        if self.n_clusters is not None and self.n_clusters < 1:
            raise ConfigError(f"n_clusters must be >= 1, got {self.n_clusters}")
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.sampler not in (SAMPLER_FPS, SAMPLER_RANDOM):
            raise ConfigError(f"sampler must be 'fps' or 'random', got {self.sampler!r}")
        if self.kmeans_max_iters < 1:
            raise ConfigError("kmeans_max_iters must be >= 1")
        if not (self.kmeans_tol > 0.0):
            raise ConfigError("kmeans_tol must be positive")

    def to_dict(self) -> dict:
        return {
            "n_bins": self.n_bins,
            "n_clusters": self.n_clusters,
            "n_samples": self.n_samples,
            "include_global_mean": self.include_global_mean,
            "sampler": self.sampler,
            "sampler_seed": self.sampler_seed,
            "kmeans_seed": self.kmeans_seed,
            "kmeans_max_iters": self.kmeans_max_iters,
            "kmeans_tol": self.kmeans_tol,
        }

    @staticmethod
    def from_dict(data: dict) -> "RepresentationOptions":
        known = {f: data[f] for f in RepresentationOptions.__dataclass_fields__ if f in data}
        unknown = set(data) - set(RepresentationOptions.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown representation options: {sorted(unknown)}")
        return RepresentationOptions(**known)


@dataclass(frozen=True)
class ReferenceFrame:
    """Shared binning edges and class anchors built from one labeled source set.

    ``bin_edges[d]`` holds B+1 strictly increasing edges for dimension d.
    ``class_centroids[k]`` is the mean of the source features with label k.
    """

    bin_edges: np.ndarray
    class_centroids: np.ndarray
    built_from: str = ""

    @property
    def dim(self) -> int:
        return int(self.bin_edges.shape[0])

    @property
    def n_bins(self) -> int:
        return int(self.bin_edges.shape[1]) - 1

    @property
    def n_clusters(self) -> int:
        return int(self.class_centroids.shape[0])

    def to_dict(self) -> dict:
        return {
            "built_from": self.built_from,
            "bin_edges": self.bin_edges.tolist(),
            "class_centroids": self.class_centroids.tolist(),
        }

    @staticmethod
    def from_dict(data: dict) -> "ReferenceFrame":
        return ReferenceFrame(
            bin_edges=np.asarray(data["bin_edges"], dtype=np.float64),
            class_centroids=np.asarray(data["class_centroids"], dtype=np.float64),
            built_from=str(data.get("built_from", "")),
        )


def save_frame(frame: ReferenceFrame, path: "str | Path") -> None:
    Path(path).write_text(json.dumps(frame.to_dict(), sort_keys=True))


def load_frame(path: "str | Path") -> ReferenceFrame:
    from .errors import FormatError

    try:
        data = json.loads(Path(path).read_text())
        return ReferenceFrame.from_dict(data)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: not a valid reference frame file: {exc}") from exc


def build_reference_frame(source: FeatureSet, opts: RepresentationOptions) -> ReferenceFrame:
    """Fit bin edges and per-class centroids on the labeled source set.

    Edges for each dimension span [min - m, max + m] in B equal-width bins,
    where m is 5% of the observed range (or 0.05 on a constant dimension),
    so every later set lands inside with clipping only at the extremes.
    """
    if source.labels is None:
        raise InputError("reference frame requires a labeled source set")
    feats = source.features.astype(np.float64)
    labels = source.labels
    present = np.unique(labels)
    declared = source.softmax.shape[1] if source.softmax is not None else None

    k = opts.n_clusters
    if k is None:
        k = declared if declared is not None else int(present.size)
    if declared is not None and k != declared:
        raise InputError(
            f"n_clusters={k} disagrees with the source's {declared} softmax classes"
        )
    expected = np.arange(k)
    if present.size != k or not np.array_equal(present, expected):
        missing = sorted(set(expected.tolist()) - set(present.tolist()))
        raise InputError(
            f"source must contain every class 0..{k - 1} exactly; missing {missing}, "
            f"present {present.tolist()}"
        )
    if k > source.n:
        raise InputError(f"need at least {k} rows to anchor {k} classes, got {source.n}")

    mins = feats.min(axis=0)
    maxs = feats.max(axis=0)
    spans = maxs - mins
    margins = np.where(spans > 0.0, 0.05 * spans, 0.05)
    edges = np.empty((feats.shape[1], opts.n_bins + 1), dtype=np.float64)
    for d in range(feats.shape[1]):
        edges[d] = np.linspace(mins[d] - margins[d], maxs[d] + margins[d], opts.n_bins + 1)

    centroids = np.empty((k, feats.shape[1]), dtype=np.float64)
    for cls in range(k):
        centroids[cls] = feats[labels == cls].mean(axis=0)
    for a in range(k):
        for b in range(a + 1, k):
            if np.array_equal(centroids[a], centroids[b]):
                raise InputError(f"classes {a} and {b} produced identical centroids")

    return ReferenceFrame(bin_edges=edges, class_centroids=centroids, built_from=source.source_id)


def compute_shape(fs: FeatureSet, frame: ReferenceFrame) -> np.ndarray:
    """Per-dimension histogram fractions over the frame's bins, shape (D, B).

    Bins are left-closed / right-open with the last bin closed; values
    outside the frame's span are counted in the nearest edge bin, so each
    row sums to exactly 1.
    """
    if fs.dim != frame.dim:
        raise InputError(f"feature dim {fs.dim} != frame dim {frame.dim}")
    feats = fs.features.astype(np.float64)
    n, d = feats.shape
    n_bins = frame.n_bins
    out = np.empty((d, n_bins), dtype=np.float64)
    for j in range(d):
        idx = np.searchsorted(frame.bin_edges[j], feats[:, j], side="right") - 1
        np.clip(idx, 0, n_bins - 1, out=idx)
        out[j] = np.bincount(idx, minlength=n_bins) / n
    return out


def _pairwise_sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape (N, K); clamped at zero."""
    sq = (
        np.sum(points * points, axis=1)[:, None]
        - 2.0 * points @ centers.T
        + np.sum(centers * centers, axis=1)[None, :]
    )
    return np.maximum(sq, 0.0)


def _cluster_means(
    points: np.ndarray, assign: np.ndarray, k: int
) -> Tuple[np.ndarray, np.ndarray]:
    counts = np.bincount(assign, minlength=k).astype(np.float64)
    sums = np.zeros((k, points.shape[1]), dtype=np.float64)
    np.add.at(sums, assign, points)
    means = np.zeros_like(sums)
    nonempty = counts > 0
    means[nonempty] = sums[nonempty] / counts[nonempty][:, None]
    return means, counts


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int = 0,
    max_iters: int = 100,
    tol: float = 1e-6,
) -> Tuple[np.ndarray, np.ndarray, List[float]]:
    """Lloyd's k-means with seeded k-means++ initialization.

    Returns ``(centers, assignments, objective_history)`` where the
    objective is the sum of squared distances to assigned centers, recorded
    once per iteration before the center update.  Iteration stops when the
    relative objective decrease falls below ``tol`` or after ``max_iters``.
    An emptied cluster is reseeded to the point farthest from its nearest
    center before the next iteration.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise InputError("kmeans needs a non-empty 2-d array of points")
    n = points.shape[0]
    if not 1 <= k <= n:
        raise InputError(f"k must be in [1, {n}], got {k}")

    rng = np.random.default_rng(seed)
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[rng.integers(n)]
    closest = _pairwise_sq_dists(points, centers[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total > 0.0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centers[j] = points[idx]
        np.minimum(closest, _pairwise_sq_dists(points, centers[j : j + 1])[:, 0], out=closest)

    history: List[float] = []
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iters):
        dists = _pairwise_sq_dists(points, centers)
        assign = dists.argmin(axis=1)
        obj = float(dists[np.arange(n), assign].sum())
        history.append(obj)
        if len(history) >= 2:
            prev = history[-2]
            decrease = prev - obj
            if prev <= 0.0 or decrease / prev < tol:
                # Snap to the means of the final assignment; at a fixed point
                # this reproduces the current centers bit for bit.
                means, counts = _cluster_means(points, assign, k)
                centers = np.where(counts[:, None] > 0, means, centers)
                break
        means, counts = _cluster_means(points, assign, k)
        for j in np.where(counts == 0)[0]:
            occupied = means[counts > 0]
            far = _pairwise_sq_dists(points, occupied).min(axis=1).argmax()
            means[j] = points[far]
            counts[j] = 1.0
        centers = means
    return centers, assign, history


def match_to_reference(centers: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Reorder ``centers`` so row k is the center assigned to anchor k.

    Uses a minimum-cost one-to-one matching on Euclidean distance, making
    cluster rows comparable across sample sets that share a frame.
    """
    if centers.shape != anchors.shape:
        raise InputError(f"cannot match centers {centers.shape} to anchors {anchors.shape}")
    cost = np.sqrt(_pairwise_sq_dists(centers, anchors))
    rows, cols = linear_sum_assignment(cost)
    ordered = np.empty_like(centers)
    ordered[cols] = centers[rows]
    return ordered


def compute_clusters(fs: FeatureSet, frame: ReferenceFrame, opts: RepresentationOptions) -> np.ndarray:
    """K cluster centers for one sample set, aligned to the frame's classes.

    Rows are lexicographically sorted before clustering so the seeded
    initialization -- and therefore the result -- does not depend on the
    order rows happen to arrive in.
    """
    if fs.dim != frame.dim:
        raise InputError(f"feature dim {fs.dim} != frame dim {frame.dim}")
    k = opts.n_clusters if opts.n_clusters is not None else frame.n_clusters
    if k != frame.n_clusters:
        raise InputError(
            f"n_clusters={k} cannot be matched to a frame with {frame.n_clusters} anchors"
        )
    if fs.n < k:
        raise InputError(f"need at least {k} rows to form {k} clusters, got {fs.n}")
    feats = fs.features.astype(np.float64)
    order = np.lexsort(feats.T[::-1])
    centers, _, _ = kmeans(
        feats[order], k, seed=opts.kmeans_seed, max_iters=opts.kmeans_max_iters, tol=opts.kmeans_tol
    )
    return match_to_reference(centers, frame.class_centroids)


def fps_indices(points: np.ndarray, n_samples: int) -> np.ndarray:
    """Greedy farthest-point selection order over ``points``.

    The walk starts at the row farthest from the global mean and repeatedly
    takes the row maximizing the minimum distance to everything selected so
    far; all ties break toward the lowest row index.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise InputError("farthest-point sampling needs a non-empty 2-d array")
    n = points.shape[0]
    if not 1 <= n_samples <= n:
        raise InputError(f"n_samples must be in [1, {n}], got {n_samples}")

    # Summing in lexicographic order keeps the mean -- and hence the chosen
    # start row -- independent of how the caller happened to order the rows.
    mean = points[np.lexsort(points.T[::-1])].mean(axis=0)
    start_d = np.linalg.norm(points - mean, axis=1)
    first = int(start_d.argmax())
    chosen = np.empty(n_samples, dtype=np.int64)
    chosen[0] = first
    min_d = np.linalg.norm(points - points[first], axis=1)
    min_d[first] = -np.inf
    for i in range(1, n_samples):
        nxt = int(min_d.argmax())
        chosen[i] = nxt
        np.minimum(min_d, np.linalg.norm(points - points[nxt], axis=1), out=min_d)
        min_d[nxt] = -np.inf
    return chosen


def fps_sample(fs: FeatureSet, n_samples: int) -> np.ndarray:
    """The ``n_samples`` farthest-point rows of ``fs``, in selection order."""
    feats = fs.features.astype(np.float64)
    if fs.n < n_samples:
        raise InputError(f"cannot sample {n_samples} rows from {fs.n}")
    return feats[fps_indices(feats, n_samples)]


def random_sample(fs: FeatureSet, n_samples: int, seed: int) -> np.ndarray:
    """``n_samples`` rows drawn uniformly without replacement, in draw order."""
    if fs.n < n_samples:
        raise InputError(f"cannot sample {n_samples} rows from {fs.n}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(fs.n, size=n_samples, replace=False)
    return fs.features.astype(np.float64)[idx]


@dataclass(frozen=True)
class DatasetRepresentation:
    """The assembled summary of one sample set against one frame."""

    shape: np.ndarray
    clusters: np.ndarray
    samples: np.ndarray
    flat: np.ndarray
    options: RepresentationOptions
    source_id: str = ""
    global_mean: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return int(self.shape.shape[0])

    def to_dict(self) -> dict:
        data = {
            "source_id": self.source_id,
            "options": self.options.to_dict(),
            "shape": self.shape.tolist(),
            "clusters": self.clusters.tolist(),
            "samples": self.samples.tolist(),
            "flat": self.flat.tolist(),
        }
        if self.global_mean is not None:
            data["global_mean"] = self.global_mean.tolist()
        return data

    @staticmethod
    def from_dict(data: dict) -> "DatasetRepresentation":
        gm = data.get("global_mean")
        return DatasetRepresentation(
            shape=np.asarray(data["shape"], dtype=np.float64),
            clusters=np.asarray(data["clusters"], dtype=np.float64),
            samples=np.asarray(data["samples"], dtype=np.float64),
            flat=np.asarray(data["flat"], dtype=np.float64),
            options=RepresentationOptions.from_dict(data["options"]),
            source_id=str(data.get("source_id", "")),
            global_mean=None if gm is None else np.asarray(gm, dtype=np.float64),
        )


def save_representation(rep: DatasetRepresentation, path: "str | Path") -> None:
    Path(path).write_text(json.dumps(rep.to_dict(), sort_keys=True))


def load_representation(path: "str | Path") -> DatasetRepresentation:
    from .errors import FormatError

    try:
        return DatasetRepresentation.from_dict(json.loads(Path(path).read_text()))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: not a valid representation file: {exc}") from exc


def global_mean(fs: FeatureSet) -> np.ndarray:
    """Column means in float64, summed in lexicographic row order."""
    feats = fs.features.astype(np.float64)
    return feats[np.lexsort(feats.T[::-1])].mean(axis=0)


def assemble(
    fs: FeatureSet, frame: ReferenceFrame, opts: RepresentationOptions
) -> DatasetRepresentation:
    """Build the full representation: histograms + clusters + samples.

    The flat vector concatenates the pieces row-major in that order, with
    the global mean appended when ``include_global_mean`` is set.
    """
    shape = compute_shape(fs, frame)
    clusters = compute_clusters(fs, frame, opts)
    if opts.sampler == SAMPLER_FPS:
        samples = fps_sample(fs, opts.n_samples)
    else:
        samples = random_sample(fs, opts.n_samples, opts.sampler_seed)
    gm = global_mean(fs) if opts.include_global_mean else None
    pieces = [shape.ravel(), clusters.ravel(), samples.ravel()]
    if gm is not None:
        pieces.append(gm)
    flat = np.concatenate(pieces)
    return DatasetRepresentation(
        shape=shape,
        clusters=clusters,
        samples=samples,
        flat=flat,
        options=opts,
        source_id=fs.source_id,
        global_mean=gm,
    )
