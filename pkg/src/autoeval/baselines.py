"""Scalar accuracy estimators and distribution-distance baselines.

These are the comparison methods: two threshold counters that read accuracy
straight off the softmax outputs, the average-confidence statistic, and the
Frechet distance between Gaussian summaries of feature sets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError
from .featureset import FeatureSet

FD_ONLY = "fd_only"
AC_ONLY = "ac_only"
FD_SIGMA_TAU = "fd_sigma_tau"

_GAUSS_RIDGE = 1e-6
_FD_NEGATIVE_SLACK = -1e-8


@dataclass(frozen=True)
class GaussianSummary:
    """Sample mean and ridge-stabilized covariance of one feature set."""

    mean: np.ndarray
    covariance: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


def gaussian_summary(fs: FeatureSet, ridge: float = _GAUSS_RIDGE) -> GaussianSummary:
    """Fit a Gaussian to the features; needs >= 2 rows for the covariance.

    The covariance uses the N-1 denominator and gets ``ridge`` added to its
    diagonal so downstream matrix square roots stay well conditioned.
    """
    if fs.n < 2:
        raise InputError(f"need at least 2 rows for a covariance, got {fs.n}")
    feats = fs.features.astype(np.float64)
    mean = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov) + ridge * np.eye(feats.shape[1])
    return GaussianSummary(mean=mean, covariance=cov)


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, clamping tiny negatives."""
    vals, vecs = np.linalg.eigh(matrix)
    vals = np.maximum(vals, 0.0)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    """Frechet distance between two Gaussians:

    ``||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)``.

    Round-off can push the result a hair below zero; anything above -1e-8 is
    clamped to 0, anything lower (or non-finite) is a numeric error.
    """
    if a.dim != b.dim:
        raise InputError(f"summaries have mismatched dims {a.dim} and {b.dim}")
    diff = a.mean - b.mean
    sqrt_a = _psd_sqrt(a.covariance)
    inner = sqrt_a @ b.covariance @ sqrt_a
    inner = (inner + inner.T) / 2.0
    vals = np.maximum(np.linalg.eigvalsh(inner), 0.0)
    value = float(
        diff @ diff
        + np.trace(a.covariance)
        + np.trace(b.covariance)
        - 2.0 * np.sqrt(vals).sum()
    )
    if not np.isfinite(value):
        raise NumericError(f"Frechet distance is not finite: {value}")
    if value < 0.0:
        if value < _FD_NEGATIVE_SLACK:
            raise NumericError(f"Frechet distance is negative beyond tolerance: {value}")
        value = 0.0
    return value


def _require_softmax(fs: FeatureSet) -> np.ndarray:
    if fs.softmax is None:
        raise InputError("this estimator needs softmax outputs")
    return fs.softmax.astype(np.float64)


def prediction_score_estimate(fs: FeatureSet, tau: float) -> float:
    """Fraction of rows whose top softmax entry reaches ``tau``."""
    if not 0.0 < tau <= 1.0:
        raise InputError(f"threshold must be in (0, 1], got {tau}")
    probs = _require_softmax(fs)
    return float(np.mean(probs.max(axis=1) >= tau))


def entropy_score_estimate(fs: FeatureSet, tau: float) -> float:
    """Fraction of rows whose normalized softmax entropy falls below ``tau``.

    Entropy is divided by log(C) so the statistic lives in [0, 1]; the
    0*log(0) terms are taken as 0.
    """
    if not 0.0 < tau <= 1.0:
        raise InputError(f"threshold must be in (0, 1], got {tau}")
    probs = _require_softmax(fs)
    if probs.shape[1] < 2:
        raise InputError("entropy score needs at least 2 classes")
    terms = np.where(probs > 0.0, probs * np.log(np.where(probs > 0.0, probs, 1.0)), 0.0)
    entropy = -terms.sum(axis=1) / np.log(probs.shape[1])
    return float(np.mean(entropy < tau))


def average_confidence(fs: FeatureSet) -> float:
    """Mean of the per-row maximum softmax probability."""
    probs = _require_softmax(fs)
    return float(probs.max(axis=1).mean())


def baseline_representation(
    fs: FeatureSet, train_summary: GaussianSummary, kind: str
) -> np.ndarray:
    """Scalar-feature vectors the regressor can consume in place of the full
    representation.

    ``fd_only``      -> [FD to the training summary], length 1
    ``ac_only``      -> [average confidence], length 1
    ``fd_sigma_tau`` -> [FD] ++ per-dimension feature mean ++ per-dimension
                        feature variance, length 1 + 2D.
    """
    if kind == FD_ONLY:
        return np.array([frechet_distance(gaussian_summary(fs), train_summary)])
    if kind == AC_ONLY:
        return np.array([average_confidence(fs)])
    if kind == FD_SIGMA_TAU:
        fd = frechet_distance(gaussian_summary(fs), train_summary)
        feats = fs.features.astype(np.float64)
        mean = feats.mean(axis=0)
        var = feats.var(axis=0, ddof=1) if fs.n > 1 else np.zeros(fs.dim)
        return np.concatenate(([fd], mean, var))
    raise InputError(f"unknown baseline kind {kind!r}")
