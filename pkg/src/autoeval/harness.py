"""Experiment orchestration: RMSE tables over methods, seeds, and splits.

Given a synthesized workspace, `run_experiment` builds each sample set's
representation pieces once, slices them into per-method design matrices,
trains the regressor per method and seed (threshold baselines skip the
regressor entirely), and writes `report.json` / `report.csv`.
`ablation_table` turns a report holding OURS and the three leave-one-out
variants into per-seed RMSE deltas.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import baselines, featureset, metaset, regress, represent
from .errors import ConfigError, InputError, NumericError, WorkspaceError

OURS = "OURS"
OURS_PLUS_GM = "OURS_PLUS_GM"
OURS_RANDOM_SAMPLER = "OURS_RANDOM_SAMPLER"
SHAPE_ONLY = "SHAPE_ONLY"
CLUSTER_ONLY = "CLUSTER_ONLY"
SAMPLE_ONLY = "SAMPLE_ONLY"
OURS_MINUS_SHAPE = "OURS_MINUS_SHAPE"
OURS_MINUS_CLUSTER = "OURS_MINUS_CLUSTER"
OURS_MINUS_SAMPLE = "OURS_MINUS_SAMPLE"
FD_ONLY = "FD_ONLY"
AC_ONLY = "AC_ONLY"
FD_SIGMA_TAU = "FD_SIGMA_TAU"
PRED_SCORE = "PRED_SCORE"
ENTROPY_SCORE = "ENTROPY_SCORE"
OURS_PLUS_AC = "OURS_PLUS_AC"

ALL_METHODS = (
    OURS,
    OURS_PLUS_GM,
    OURS_RANDOM_SAMPLER,
    SHAPE_ONLY,
    CLUSTER_ONLY,
    SAMPLE_ONLY,
    OURS_MINUS_SHAPE,
    OURS_MINUS_CLUSTER,
    OURS_MINUS_SAMPLE,
    FD_ONLY,
    AC_ONLY,
    FD_SIGMA_TAU,
    PRED_SCORE,
    ENTROPY_SCORE,
    OURS_PLUS_AC,
)

# Which cached pieces each method's design matrix is sliced from.
_NEEDS: Dict[str, frozenset] = {
    OURS: frozenset({"shape", "clusters", "fps"}),
    OURS_PLUS_GM: frozenset({"shape", "clusters", "fps", "gm"}),
    OURS_RANDOM_SAMPLER: frozenset({"shape", "clusters", "random"}),
    SHAPE_ONLY: frozenset({"shape"}),
    CLUSTER_ONLY: frozenset({"clusters"}),
    SAMPLE_ONLY: frozenset({"fps"}),
    OURS_MINUS_SHAPE: frozenset({"clusters", "fps"}),
    OURS_MINUS_CLUSTER: frozenset({"shape", "fps"}),
    OURS_MINUS_SAMPLE: frozenset({"shape", "clusters"}),
    FD_ONLY: frozenset({"fd"}),
    AC_ONLY: frozenset({"ac"}),
    FD_SIGMA_TAU: frozenset({"fdst"}),
    PRED_SCORE: frozenset({"pred"}),
    ENTROPY_SCORE: frozenset({"ent"}),
    OURS_PLUS_AC: frozenset({"shape", "clusters", "fps", "ac"}),
}

_THRESHOLD_METHODS = (PRED_SCORE, ENTROPY_SCORE)


def default_train_config() -> regress.TrainConfig:
    """Harness training schedule: fewer epochs than the library default keeps
    the full multi-method, multi-seed sweep inside a desk-scale time budget;
    best-epoch checkpointing makes the shorter schedule safe."""
    return regress.TrainConfig(epochs=60)


@dataclass(frozen=True)
class ExperimentConfig:
    workspace: Path
    representation: represent.RepresentationOptions = field(
        default_factory=represent.RepresentationOptions
    )
    methods: Tuple[str, ...] = ALL_METHODS
    train: regress.TrainConfig = field(default_factory=default_train_config)
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    pred_score_taus: Tuple[float, ...] = (0.8, 0.9)
    entropy_score_taus: Tuple[float, ...] = (0.2, 0.3)
    random_sampler_draws: int = 5
    output_dir: Optional[Path] = None

    def __post_init__(self) -> None:
        if not self.methods:
            raise ConfigError("methods must be non-empty")
        unknown = [m for m in self.methods if m not in _NEEDS]
        if unknown:
            raise ConfigError(f"unknown methods: {unknown}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.random_sampler_draws < 1:
            raise ConfigError("random_sampler_draws must be >= 1")

    def to_dict(self) -> dict:
        return {
            "workspace": str(self.workspace),
            "representation": self.representation.to_dict(),
            "methods": list(self.methods),
            "train": self.train.to_dict(),
            "seeds": list(self.seeds),
            "pred_score_taus": list(self.pred_score_taus),
            "entropy_score_taus": list(self.entropy_score_taus),
            "random_sampler_draws": self.random_sampler_draws,
            "output_dir": None if self.output_dir is None else str(self.output_dir),
        }


@dataclass(frozen=True)
class RmseRow:
    method: str
    split: str
    seed: int
    rmse_percent: float
    draw: Optional[int] = None


@dataclass(frozen=True)
class PredictionRecord:
    method: str
    seed: int
    split: str
    set_id: str
    prediction: float
    truth: float
    draw: Optional[int] = None


@dataclass
class ExperimentReport:
    rows: List[RmseRow]
    predictions: List[PredictionRecord]
    config: dict
    meta: dict

    def csv_rows(self) -> List[RmseRow]:
        """Rows destined for report.csv: one per method x split x seed.

        OURS_RANDOM_SAMPLER's per-draw rows collapse to their mean, which is
        how a multi-draw random-sampling comparison is scored.
        """
        plain = [r for r in self.rows if r.draw is None]
        random_rows = [r for r in self.rows if r.draw is not None]
        grouped: Dict[Tuple[str, str, int], List[float]] = {}
        order: List[Tuple[str, str, int]] = []
        for r in random_rows:
            key = (r.method, r.split, r.seed)
            if key not in grouped:
                grouped[key] = []
                order.append(key)
            grouped[key].append(r.rmse_percent)
        out = list(plain)
        for key in order:
            method, split, seed = key
            out.append(
                RmseRow(
                    method=method,
                    split=split,
                    seed=seed,
                    rmse_percent=float(np.mean(grouped[key])),
                )
            )
        return out

    def mean_rmse(self, method: str, split: str) -> float:
        vals = [r.rmse_percent for r in self.csv_rows() if r.method == method and r.split == split]
        if not vals:
            raise InputError(f"no rows for method {method!r} on split {split!r}")
        return float(np.mean(vals))


def rmse(predictions: Sequence[float], truths: Sequence[float]) -> float:
    """Root mean squared error, reported in percent (x100)."""
    preds = np.asarray(predictions, dtype=np.float64)
    trues = np.asarray(truths, dtype=np.float64)
    if preds.shape != trues.shape or preds.ndim != 1 or preds.size == 0:
        raise InputError(
            f"predictions and truths must be equal nonzero lengths, got "
            f"{preds.shape} and {trues.shape}"
        )
    return float(np.sqrt(np.mean((preds - trues) ** 2)) * 100.0)


def _method_label(method: str, tau: float) -> str:
    return f"{method}({tau:g})"


def _random_seed_for(base_seed: int, draw: int, set_index: int) -> int:
    ss = np.random.SeedSequence(base_seed, spawn_key=(4, draw, set_index))
    return int(ss.generate_state(1)[0])


class _Bundles:
    """Per-set cached pieces, stacked into arrays aligned with the records."""

    def __init__(self) -> None:
        self.shape: Optional[np.ndarray] = None
        self.clusters: Optional[np.ndarray] = None
        self.fps: Optional[np.ndarray] = None
        self.gm: Optional[np.ndarray] = None
        self.fd: Optional[np.ndarray] = None
        self.ac: Optional[np.ndarray] = None
        self.fdst: Optional[np.ndarray] = None
        self.pred: Dict[float, np.ndarray] = {}
        self.ent: Dict[float, np.ndarray] = {}
        self.random: Dict[int, np.ndarray] = {}


def _build_bundles(
    cfg: ExperimentConfig,
    records: Sequence[metaset.SampleSetRecord],
    frame: represent.ReferenceFrame,
    train_summary: baselines.GaussianSummary,
    needs: frozenset,
) -> _Bundles:
    opts = cfg.representation
    n = len(records)
    out = _Bundles()
    rows: Dict[str, List[np.ndarray]] = {key: [] for key in ("shape", "clusters", "fps", "gm", "fdst")}
    scalars: Dict[str, List[float]] = {key: [] for key in ("fd", "ac")}
    pred: Dict[float, List[float]] = {t: [] for t in cfg.pred_score_taus}
    ent: Dict[float, List[float]] = {t: [] for t in cfg.entropy_score_taus}
    random_rows: Dict[int, List[np.ndarray]] = {d: [] for d in range(cfg.random_sampler_draws)}

    for idx, rec in enumerate(records):
        fs = featureset.load(Path(cfg.workspace) / rec.path, source_id=rec.set_id)
        if "shape" in needs:
            rows["shape"].append(represent.compute_shape(fs, frame).ravel())
        if "clusters" in needs:
            rows["clusters"].append(represent.compute_clusters(fs, frame, opts).ravel())
        if "fps" in needs:
            rows["fps"].append(represent.fps_sample(fs, opts.n_samples).ravel())
        if "gm" in needs:
            rows["gm"].append(represent.global_mean(fs))
        if "fd" in needs:
            scalars["fd"].append(
                baselines.frechet_distance(baselines.gaussian_summary(fs), train_summary)
            )
        if "ac" in needs:
            scalars["ac"].append(baselines.average_confidence(fs))
        if "fdst" in needs:
            rows["fdst"].append(
                baselines.baseline_representation(fs, train_summary, baselines.FD_SIGMA_TAU)
            )
        if "pred" in needs:
            for t in cfg.pred_score_taus:
                pred[t].append(baselines.prediction_score_estimate(fs, t))
        if "ent" in needs:
            for t in cfg.entropy_score_taus:
                ent[t].append(baselines.entropy_score_estimate(fs, t))
        if "random" in needs:
            for d in range(cfg.random_sampler_draws):
                sample = represent.random_sample(
                    fs, opts.n_samples, seed=_random_seed_for(0, d, idx)
                )
                random_rows[d].append(sample.ravel())

    if rows["shape"]:
        out.shape = np.vstack(rows["shape"])
    if rows["clusters"]:
        out.clusters = np.vstack(rows["clusters"])
    if rows["fps"]:
        out.fps = np.vstack(rows["fps"])
    if rows["gm"]:
        out.gm = np.vstack(rows["gm"])
    if rows["fdst"]:
        out.fdst = np.vstack(rows["fdst"])
    if scalars["fd"]:
        out.fd = np.asarray(scalars["fd"])[:, None]
    if scalars["ac"]:
        out.ac = np.asarray(scalars["ac"])[:, None]
    out.pred = {t: np.asarray(v) for t, v in pred.items() if v}
    out.ent = {t: np.asarray(v) for t, v in ent.items() if v}
    out.random = {d: np.vstack(v) for d, v in random_rows.items() if v}
    assert n == len(records)
    return out


def _design_matrix(bundles: _Bundles, method: str, draw: Optional[int] = None) -> np.ndarray:
    pieces: List[np.ndarray] = []
    if "shape" in _NEEDS[method]:
        pieces.append(bundles.shape)
    if "clusters" in _NEEDS[method]:
        pieces.append(bundles.clusters)
    if method == OURS_RANDOM_SAMPLER:
        pieces.append(bundles.random[draw])
    elif "fps" in _NEEDS[method]:
        pieces.append(bundles.fps)
    if "gm" in _NEEDS[method]:
        pieces.append(bundles.gm)
    if "fd" in _NEEDS[method]:
        pieces.append(bundles.fd)
    if "fdst" in _NEEDS[method]:
        pieces.append(bundles.fdst)
    if "ac" in _NEEDS[method]:
        pieces.append(bundles.ac)
    return np.hstack(pieces)


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Execute the configured method roster over the workspace.

    For every regression method and seed: fit on TRAIN_META with VAL_META
    checkpointing, then predict every set in all three splits.  Threshold
    methods report their per-set fraction directly.  RMSE is computed per
    method x split x seed (and per draw for the random-sampler variant).
    """
    started = time.monotonic()
    manifest = metaset.load_manifest(cfg.workspace)
    records = [metaset.SampleSetRecord.from_dict(r) for r in manifest["records"]]
    if not records:
        raise WorkspaceError(f"{cfg.workspace}: manifest holds no records")
    source_path = Path(cfg.workspace) / manifest["source_path"]
    if not source_path.exists():
        raise WorkspaceError(f"{source_path} is missing")
    source = featureset.load(source_path)

    frame = represent.build_reference_frame(source, cfg.representation)
    needs = frozenset().union(*(_NEEDS[m] for m in cfg.methods))
    train_summary = baselines.gaussian_summary(source)
    bundles = _build_bundles(cfg, records, frame, train_summary, needs)

    truths = np.array([r.accuracy for r in records])
    split_idx = {
        split: np.array([i for i, r in enumerate(records) if r.split == split])
        for split in metaset.SPLITS
    }
    for split, idx in split_idx.items():
        if idx.size == 0:
            raise WorkspaceError(f"{cfg.workspace}: no {split} records in manifest")

    rows: List[RmseRow] = []
    predictions: List[PredictionRecord] = []

    def eval_predictions(
        method_label: str, seed: int, preds: np.ndarray, draw: Optional[int] = None
    ) -> None:
        for split in metaset.SPLITS:
            idx = split_idx[split]
            value = rmse(preds[idx], truths[idx])
            if not np.isfinite(value):
                raise NumericError(f"{method_label}: non-finite RMSE on {split}")
            rows.append(
                RmseRow(method=method_label, split=split, seed=seed, rmse_percent=value, draw=draw)
            )
            for i in idx:
                predictions.append(
                    PredictionRecord(
                        method=method_label,
                        seed=seed,
                        split=records[i].split,
                        set_id=records[i].set_id,
                        prediction=float(preds[i]),
                        truth=float(truths[i]),
                        draw=draw,
                    )
                )

    def fit_eval(method_label: str, design: np.ndarray, seed: int, draw: Optional[int] = None) -> None:
        train_idx, val_idx = split_idx[metaset.TRAIN_META], split_idx[metaset.VAL_META]
        train_pairs = [(design[i], truths[i]) for i in train_idx]
        val_pairs = [(design[i], truths[i]) for i in val_idx]
        model = regress.fit(train_pairs, replace(cfg.train, seed=seed), val_pairs=val_pairs)
        eval_predictions(method_label, seed, regress.predict_batch(model, design), draw=draw)

    for method in cfg.methods:
        if method == PRED_SCORE:
            for tau in cfg.pred_score_taus:
                for seed in cfg.seeds:
                    eval_predictions(_method_label(method, tau), seed, bundles.pred[tau])
        elif method == ENTROPY_SCORE:
            for tau in cfg.entropy_score_taus:
                for seed in cfg.seeds:
                    eval_predictions(_method_label(method, tau), seed, bundles.ent[tau])
        elif method == OURS_RANDOM_SAMPLER:
            for seed in cfg.seeds:
                for draw in range(cfg.random_sampler_draws):
                    fit_eval(method, _design_matrix(bundles, method, draw=draw), seed, draw=draw)
        else:
            design = _design_matrix(bundles, method)
            for seed in cfg.seeds:
                fit_eval(method, design, seed)

    meta = {
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "runtime_seconds": time.monotonic() - started,
        "n_records": len(records),
    }
    return ExperimentReport(
        rows=rows, predictions=predictions, config=cfg.to_dict(), meta=meta
    )


def fit_single(cfg: ExperimentConfig, method: str) -> regress.RegressorModel:
    """Train one regressor for ``method`` on the workspace's TRAIN_META pairs
    with VAL_META checkpointing; the first configured seed is used."""
    if method not in _NEEDS:
        raise ConfigError(f"unknown method {method!r}")
    if method in _THRESHOLD_METHODS:
        raise ConfigError(f"{method} is a direct estimator; there is no regressor to train")
    manifest = metaset.load_manifest(cfg.workspace)
    records = [
        metaset.SampleSetRecord.from_dict(r)
        for r in manifest["records"]
        if r["split"] in (metaset.TRAIN_META, metaset.VAL_META)
    ]
    if not records:
        raise WorkspaceError(f"{cfg.workspace}: no TRAIN_META/VAL_META records")
    source = featureset.load(Path(cfg.workspace) / manifest["source_path"])
    frame = represent.build_reference_frame(source, cfg.representation)
    train_summary = baselines.gaussian_summary(source)
    bundles = _build_bundles(cfg, records, frame, train_summary, _NEEDS[method])
    design = _design_matrix(bundles, method, draw=0 if method == OURS_RANDOM_SAMPLER else None)
    truths = [r.accuracy for r in records]
    train_pairs = [
        (design[i], truths[i]) for i, r in enumerate(records) if r.split == metaset.TRAIN_META
    ]
    val_pairs = [
        (design[i], truths[i]) for i, r in enumerate(records) if r.split == metaset.VAL_META
    ]
    seed = cfg.seeds[0]
    return regress.fit(train_pairs, replace(cfg.train, seed=seed), val_pairs=val_pairs or None)


def report_to_dict(report: ExperimentReport) -> dict:
    return {
        "config": report.config,
        "meta": report.meta,
        "rows": [
            {
                "method": r.method,
                "split": r.split,
                "seed": r.seed,
                "draw": r.draw,
                "rmse_percent": r.rmse_percent,
            }
            for r in report.rows
        ],
        "predictions": [
            {
                "method": p.method,
                "seed": p.seed,
                "draw": p.draw,
                "split": p.split,
                "set_id": p.set_id,
                "prediction": p.prediction,
                "truth": p.truth,
            }
            for p in report.predictions
        ],
    }


def report_from_dict(data: dict) -> ExperimentReport:
    try:
        rows = [
            RmseRow(
                method=r["method"],
                split=r["split"],
                seed=int(r["seed"]),
                rmse_percent=float(r["rmse_percent"]),
                draw=r.get("draw"),
            )
            for r in data["rows"]
        ]
        predictions = [
            PredictionRecord(
                method=p["method"],
                seed=int(p["seed"]),
                split=p["split"],
                set_id=p["set_id"],
                prediction=float(p["prediction"]),
                truth=float(p["truth"]),
                draw=p.get("draw"),
            )
            for p in data["predictions"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        from .errors import FormatError

        raise FormatError(f"malformed report: {exc}") from exc
    return ExperimentReport(
        rows=rows,
        predictions=predictions,
        config=data.get("config", {}),
        meta=data.get("meta", {}),
    )


def load_report(path: "str | Path") -> ExperimentReport:
    from .errors import FormatError

    try:
        return report_from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc


def _write_atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def write_report(report: ExperimentReport, out_dir: "str | Path") -> Tuple[Path, Path]:
    """Emit report.json (everything) and report.csv (method, split, seed,
    rmse_percent at 4 decimals); returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    csv_path = out_dir / "report.csv"
    _write_atomic_text(json_path, json.dumps(report_to_dict(report), indent=2))

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "split", "seed", "rmse_percent"])
    for row in report.csv_rows():
        writer.writerow([row.method, row.split, row.seed, f"{row.rmse_percent:.4f}"])
    _write_atomic_text(csv_path, buf.getvalue())
    return json_path, csv_path


_ABLATION_COMPONENTS = (
    ("shape", OURS_MINUS_SHAPE),
    ("clusters", OURS_MINUS_CLUSTER),
    ("samples", OURS_MINUS_SAMPLE),
)


def ablation_table(report: ExperimentReport) -> List[dict]:
    """Leave-one-out RMSE deltas (variant minus full) per component, split,
    and seed, plus a mean row per component and split.

    A positive delta means removing the component hurt.
    """
    have = {r.method for r in report.csv_rows()}
    required = {OURS} | {m for _, m in _ABLATION_COMPONENTS}
    missing = required - have
    if missing:
        raise InputError(f"report lacks methods needed for ablation: {sorted(missing)}")

    by_key = {
        (r.method, r.split, r.seed): r.rmse_percent for r in report.csv_rows()
    }
    splits = sorted({r.split for r in report.csv_rows()})
    seeds = sorted({r.seed for r in report.csv_rows() if r.method == OURS})
    table: List[dict] = []
    for component, method in _ABLATION_COMPONENTS:
        for split in splits:
            deltas = []
            for seed in seeds:
                full = by_key[(OURS, split, seed)]
                without = by_key[(method, split, seed)]
                delta = without - full
                deltas.append(delta)
                table.append(
                    {
                        "component": component,
                        "split": split,
                        "seed": seed,
                        "rmse_full_percent": full,
                        "rmse_without_percent": without,
                        "delta_percent": delta,
                    }
                )
            table.append(
                {
                    "component": component,
                    "split": split,
                    "seed": "mean",
                    "rmse_full_percent": float(
                        np.mean([by_key[(OURS, split, s)] for s in seeds])
                    ),
                    "rmse_without_percent": float(
                        np.mean([by_key[(method, split, s)] for s in seeds])
                    ),
                    "delta_percent": float(np.mean(deltas)),
                }
            )
    return table


def write_ablation_csv(table: List[dict], path: "str | Path") -> Path:
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["component", "split", "seed", "rmse_full_percent", "rmse_without_percent", "delta_percent"]
    )
    for row in table:
        writer.writerow(
            [
                row["component"],
                row["split"],
                row["seed"],
                f"{row['rmse_full_percent']:.4f}",
                f"{row['rmse_without_percent']:.4f}",
                f"{row['delta_percent']:.4f}",
            ]
        )
    _write_atomic_text(path, buf.getvalue())
    return path
