"""The accuracy regressor: a small fully connected network on flat
representations.

Architecture is [input, 512, 128, 1] with leaky-rectifier hidden units
(slope 0.01) and a logistic output, so every prediction lands in (0, 1) --
the valid accuracy range.  Training is plain float64 numpy: Adam on MSE,
per-feature input standardization frozen from the training split, and
best-validation-epoch checkpointing.  Backprop is written out by hand and
kept honest by a central-finite-difference gradient check.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, FormatError, InputError, NumericError
from .optim import Adam

HIDDEN_DIMS = (512, 128)
LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings for :func:`fit`."""

    seed: int = 0
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    val_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0.0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction}")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "val_fraction": self.val_fraction,
        }

    @staticmethod
    def from_dict(data: dict) -> "TrainConfig":
        unknown = set(data) - set(TrainConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return TrainConfig(**data)


@dataclass
class RegressorModel:
    """Weights, biases, and frozen input normalization for one trained net.

    ``history`` carries per-epoch train/validation losses from :func:`fit`
    (index 0 is the state at initialization); it is metadata, not part of
    the function the model computes.
    """

    layer_dims: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    input_mean: np.ndarray
    input_scale: np.ndarray
    history: Optional[Dict[str, List[float]]] = None

    @property
    def input_dim(self) -> int:
        return int(self.layer_dims[0])

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def init_model(layer_dims: Sequence[int], seed: int = 0) -> RegressorModel:
    """Random model with the given layer sizes and identity normalization.

    Weights use scaled Gaussian init; biases get small nonzero noise so no
    unit starts exactly on the rectifier kink.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise InputError(f"layer_dims must be >= 2 positive sizes, got {dims}")
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(rng.normal(0.0, 0.01, size=fan_out))
    return RegressorModel(
        layer_dims=dims,
        weights=weights,
        biases=biases,
        input_mean=np.zeros(dims[0]),
        input_scale=np.ones(dims[0]),
    )


def _forward(
    weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], x: np.ndarray
) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Forward pass on already-normalized inputs.

    Returns (predictions shape (n,), post-activation values per layer); the
    cached activations feed :func:`_backward`.
    """
    acts = [x]
    h = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b
        if i < last:
            h = np.where(z > 0.0, z, LEAKY_SLOPE * z)
        else:
            h = 1.0 / (1.0 + np.exp(-z))
        acts.append(h)
    return acts[-1][:, 0], acts


def _backward(
    weights: Sequence[np.ndarray],
    acts: List[np.ndarray],
    preds: np.ndarray,
    targets: np.ndarray,
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Gradients of mean squared error wrt every weight and bias."""
    n = preds.shape[0]
    # dL/dpred for L = mean((pred - y)^2), then through the logistic.
    delta = (2.0 / n) * (preds - targets)[:, None]
    out = acts[-1]
    delta = delta * out * (1.0 - out)
    grads_w: List[np.ndarray] = [None] * len(weights)  # type: ignore[list-item]
    grads_b: List[np.ndarray] = [None] * len(weights)  # type: ignore[list-item]
    for i in range(len(weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ weights[i].T
            h = acts[i]
            delta = delta * np.where(h > 0.0, 1.0, LEAKY_SLOPE)
    return grads_w, grads_b


def _normalize(model_mean: np.ndarray, model_scale: np.ndarray, x: np.ndarray) -> np.ndarray:
    return (x - model_mean) / model_scale


def predict(model: RegressorModel, rep: np.ndarray) -> float:
    """Forward-pass estimate in (0, 1) for one flat representation."""
    rep = np.asarray(rep, dtype=np.float64)
    if rep.ndim != 1 or rep.shape[0] != model.input_dim:
        raise InputError(
            f"representation length {rep.shape} does not match input dim {model.input_dim}"
        )
    if not np.isfinite(rep).all():
        raise InputError("representation contains non-finite entries")
    x = _normalize(model.input_mean, model.input_scale, rep[None, :])
    preds, _ = _forward(model.weights, model.biases, x)
    return float(preds[0])


def predict_batch(model: RegressorModel, reps: np.ndarray) -> np.ndarray:
    """Vectorized :func:`predict` over rows of ``reps``."""
    reps = np.asarray(reps, dtype=np.float64)
    if reps.ndim != 2 or reps.shape[1] != model.input_dim:
        raise InputError(
            f"representations {reps.shape} do not match input dim {model.input_dim}"
        )
    if not np.isfinite(reps).all():
        raise InputError("representations contain non-finite entries")
    preds, _ = _forward(model.weights, model.biases, _normalize(model.input_mean, model.input_scale, reps))
    return preds


def _check_pairs(pairs: Sequence[Tuple[np.ndarray, float]]) -> Tuple[np.ndarray, np.ndarray]:
    if len(pairs) < 2:
        raise InputError(f"need at least 2 training pairs, got {len(pairs)}")
    first = np.asarray(pairs[0][0], dtype=np.float64)
    dim = first.shape[0]
    xs = np.empty((len(pairs), dim), dtype=np.float64)
    ys = np.empty(len(pairs), dtype=np.float64)
    for i, (vec, acc) in enumerate(pairs):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.ndim != 1 or vec.shape[0] != dim:
            raise InputError(f"pair {i} has length {vec.shape}, expected ({dim},)")
        if not np.isfinite(vec).all():
            raise InputError(f"pair {i} contains non-finite entries")
        acc = float(acc)
        if not 0.0 <= acc <= 1.0:
            raise InputError(f"pair {i} accuracy {acc} outside [0, 1]")
        xs[i] = vec
        ys[i] = acc
    return xs, ys


def _mse(weights, biases, x: np.ndarray, y: np.ndarray) -> float:
    preds, _ = _forward(weights, biases, x)
    return float(np.mean((preds - y) ** 2))


def fit(
    pairs: Sequence[Tuple[np.ndarray, float]],
    cfg: TrainConfig,
    val_pairs: Optional[Sequence[Tuple[np.ndarray, float]]] = None,
) -> RegressorModel:
    """Train on (representation, accuracy) pairs; returns the best checkpoint.

    Without ``val_pairs`` a validation subset of ``cfg.val_fraction`` is
    split off internally; with it, all of ``pairs`` train and the given
    pairs drive checkpointing.  Pairs are put in a canonical order before
    the seeded shuffle, so the result does not depend on caller ordering.
    """
    xs, ys = _check_pairs(pairs)
    order = sorted(range(len(ys)), key=lambda i: (ys[i], xs[i].tobytes()))
    xs, ys = xs[order], ys[order]

    rng = np.random.default_rng(cfg.seed)
    if val_pairs is not None:
        val_x, val_y = _check_pairs(val_pairs)
        if val_x.shape[1] != xs.shape[1]:
            raise InputError(
                f"validation dim {val_x.shape[1]} != train dim {xs.shape[1]}"
            )
        train_x, train_y = xs, ys
    else:
        perm = rng.permutation(len(ys))
        n_val = min(max(1, int(round(cfg.val_fraction * len(ys)))), len(ys) - 1)
        val_idx, train_idx = perm[:n_val], perm[n_val:]
        train_x, train_y = xs[train_idx], ys[train_idx]
        val_x, val_y = xs[val_idx], ys[val_idx]

    mean = train_x.mean(axis=0)
    std = train_x.std(axis=0)
    scale = np.where(std > 0.0, std, 1.0)
    tx = (train_x - mean) / scale
    vx = (val_x - mean) / scale

    dims = [xs.shape[1], *HIDDEN_DIMS, 1]
    seed_model = init_model(dims, seed=int(rng.integers(2**31 - 1)))
    weights = seed_model.weights
    biases = seed_model.biases

    optimizer = Adam(
        weights + biases,
        learning_rate=cfg.learning_rate,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.adam_eps,
    )

    train_losses = [_mse(weights, biases, tx, train_y)]
    val_losses = [_mse(weights, biases, vx, val_y)]
    best_val = val_losses[0]
    best_w = [w.copy() for w in weights]
    best_b = [b.copy() for b in biases]

    n = tx.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            preds, acts = _forward(weights, biases, tx[idx])
            gw, gb = _backward(weights, acts, preds, train_y[idx])
            optimizer.step(weights + biases, gw + gb)
        train_loss = _mse(weights, biases, tx, train_y)
        val_loss = _mse(weights, biases, vx, val_y)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise NumericError(f"non-finite loss at epoch {epoch}")
        train_losses.append(train_loss)
        val_losses.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_w = [w.copy() for w in weights]
            best_b = [b.copy() for b in biases]

    return RegressorModel(
        layer_dims=dims,
        weights=best_w,
        biases=best_b,
        input_mean=mean,
        input_scale=scale,
        history={"train_loss": train_losses, "val_loss": val_losses},
    )


def gradient_check(
    model: RegressorModel,
    rep: np.ndarray,
    target: float,
    n_entries: int = 200,
    seed: int = 0,
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The loss is the single-pair MSE at ``(rep, target)``; at least
    ``n_entries`` parameters (all of them on small models) are probed.
    """
    rep = np.asarray(rep, dtype=np.float64)
    if rep.ndim != 1 or rep.shape[0] != model.input_dim:
        raise InputError(
            f"representation length {rep.shape} does not match input dim {model.input_dim}"
        )
    x = _normalize(model.input_mean, model.input_scale, rep[None, :])
    y = np.array([float(target)])

    weights = [w.copy() for w in model.weights]
    biases = [b.copy() for b in model.biases]
    preds, acts = _forward(weights, biases, x)
    gw, gb = _backward(weights, acts, preds, y)
    params = weights + biases
    grads = gw + gb

    sizes = [p.size for p in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    count = min(total, max(n_entries, 0)) or total
    flat_idx = rng.choice(total, size=count, replace=False) if count < total else np.arange(total)

    bounds = np.cumsum([0] + sizes)
    worst = 0.0
    for fi in flat_idx:
        pi = int(np.searchsorted(bounds, fi, side="right")) - 1
        local = int(fi - bounds[pi])
        flat = params[pi].reshape(-1)
        keep = flat[local]
        flat[local] = keep + step
        up = _mse(weights, biases, x, y)
        flat[local] = keep - step
        down = _mse(weights, biases, x, y)
        flat[local] = keep
        numeric = (up - down) / (2.0 * step)
        analytic = grads[pi].reshape(-1)[local]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


_MODEL_FORMAT = 1


def save_model(model: RegressorModel, path: "str | Path") -> None:
    """Write the model as JSON; float64 values survive the text round trip."""
    data = {
        "format": _MODEL_FORMAT,
        "layer_dims": model.layer_dims,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "input_mean": model.input_mean.tolist(),
        "input_scale": model.input_scale.tolist(),
    }
    Path(path).write_text(json.dumps(data))


def load_model(path: "str | Path") -> RegressorModel:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    try:
        if data["format"] != _MODEL_FORMAT:
            raise FormatError(f"{path}: unsupported model format {data['format']}")
        dims = [int(d) for d in data["layer_dims"]]
        weights = [np.asarray(w, dtype=np.float64) for w in data["weights"]]
        biases = [np.asarray(b, dtype=np.float64) for b in data["biases"]]
        mean = np.asarray(data["input_mean"], dtype=np.float64)
        scale = np.asarray(data["input_scale"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed model file: {exc}") from exc

    if len(weights) != len(dims) - 1 or len(biases) != len(dims) - 1:
        raise FormatError(f"{path}: parameter count does not match layer_dims")
    for i, (w, b) in enumerate(zip(weights, biases)):
        if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
            raise FormatError(
                f"{path}: layer {i} has shape {w.shape}/{b.shape}, "
                f"expected ({dims[i]}, {dims[i + 1]})/({dims[i + 1]},)"
            )
    if mean.shape != (dims[0],) or scale.shape != (dims[0],):
        raise FormatError(f"{path}: normalization vectors do not match input dim")
    return RegressorModel(
        layer_dims=dims,
        weights=weights,
        biases=biases,
        input_mean=mean,
        input_scale=scale,
    )
