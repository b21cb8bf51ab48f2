"""Scalar baselines: Gaussian summaries, Frechet distance, threshold scores."""

from __future__ import annotations

import numpy as np
import pytest

from autoeval.baselines import (
    AC_ONLY,
    FD_ONLY,
    FD_SIGMA_TAU,
    GaussianSummary,
    average_confidence,
    baseline_representation,
    entropy_score_estimate,
    frechet_distance,
    gaussian_summary,
    prediction_score_estimate,
)
from autoeval.errors import InputError
from autoeval.featureset import FeatureSet


def _softmax_set(rows: np.ndarray) -> FeatureSet:
    rows = np.asarray(rows, dtype=np.float32)
    return FeatureSet(features=np.zeros((rows.shape[0], 1), dtype=np.float32), softmax=rows)


# ---------------------------------------------------------------------------
# Gaussian summaries


def test_gaussian_summary_matches_sample_moments() -> None:
    rng = np.random.default_rng(1)
    feats = rng.normal(size=(500, 3)).astype(np.float32)
    summary = gaussian_summary(FeatureSet(features=feats))
    feats64 = feats.astype(np.float64)
    assert summary.mean == pytest.approx(feats64.mean(axis=0))
    expected_cov = np.cov(feats64, rowvar=False, ddof=1) + 1e-6 * np.eye(3)
    assert summary.covariance == pytest.approx(expected_cov)


def test_gaussian_summary_monte_carlo_recovery() -> None:
    # Large draws from a known Gaussian recover its parameters.
    rng = np.random.default_rng(2)
    true_mean = np.array([1.0, -2.0])
    chol = np.array([[1.0, 0.0], [0.5, 0.8]])
    draws = true_mean + rng.normal(size=(20000, 2)) @ chol.T
    summary = gaussian_summary(FeatureSet(features=draws.astype(np.float32)))
    assert summary.mean == pytest.approx(true_mean, abs=0.05)
    assert summary.covariance == pytest.approx(chol @ chol.T, abs=0.08)


def test_gaussian_summary_needs_two_rows() -> None:
    with pytest.raises(InputError):
        gaussian_summary(FeatureSet(features=np.ones((1, 2), dtype=np.float32)))


# ---------------------------------------------------------------------------
# Frechet distance


def _summary(mean, cov) -> GaussianSummary:
    return GaussianSummary(mean=np.asarray(mean, dtype=np.float64),
                           covariance=np.atleast_2d(np.asarray(cov, dtype=np.float64)))


def test_frechet_distance_to_self_is_zero() -> None:
    rng = np.random.default_rng(3)
    for _ in range(10):
        a = rng.normal(size=(4, 4))
        summary = _summary(rng.normal(size=4), a @ a.T + 0.1 * np.eye(4))
        assert frechet_distance(summary, summary) <= 1e-8


def test_frechet_distance_one_dimensional_closed_form() -> None:
    # (mu, sigma^2) = (0, 1) vs (1, 1): (0-1)^2 + (1-1)^2 = 1.
    assert frechet_distance(_summary([0.0], [[1.0]]), _summary([1.0], [[1.0]])) == pytest.approx(
        1.0, abs=1e-8
    )


def test_frechet_distance_is_symmetric() -> None:
    rng = np.random.default_rng(4)
    for _ in range(10):
        la = rng.normal(size=(3, 3))
        lb = rng.normal(size=(3, 3))
        a = _summary(rng.normal(size=3), la @ la.T + 0.1 * np.eye(3))
        b = _summary(rng.normal(size=3), lb @ lb.T + 0.1 * np.eye(3))
        assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-8)


def test_frechet_distance_diagonal_closed_form() -> None:
    # For diagonal covariances: sum_d (mu_a - mu_b)^2 + (sigma_a - sigma_b)^2.
    rng = np.random.default_rng(5)
    for _ in range(100):
        d = int(rng.integers(1, 6))
        mu_a, mu_b = rng.normal(size=d), rng.normal(size=d)
        var_a = rng.uniform(0.1, 3.0, size=d)
        var_b = rng.uniform(0.1, 3.0, size=d)
        expected = float(
            ((mu_a - mu_b) ** 2).sum() + ((np.sqrt(var_a) - np.sqrt(var_b)) ** 2).sum()
        )
        got = frechet_distance(_summary(mu_a, np.diag(var_a)), _summary(mu_b, np.diag(var_b)))
        assert got == pytest.approx(expected, abs=1e-6)


def test_frechet_distance_dimension_mismatch() -> None:
    with pytest.raises(InputError):
        frechet_distance(_summary([0.0], [[1.0]]), _summary([0.0, 0.0], np.eye(2)))


def test_frechet_distance_nonnegative_on_near_singular_input() -> None:
    # Rank-deficient covariances exercise the eigenvalue clamping path.
    low = np.outer([1.0, 2.0], [1.0, 2.0])
    a = _summary([0.0, 0.0], low + 1e-9 * np.eye(2))
    b = _summary([0.0, 0.0], low + 1e-7 * np.eye(2))
    assert frechet_distance(a, b) >= 0.0


# ---------------------------------------------------------------------------
# threshold scores and confidence


def test_prediction_score_counts_confident_rows() -> None:
    fs = _softmax_set([[0.95, 0.05], [0.6, 0.4]])
    assert prediction_score_estimate(fs, 0.9) == pytest.approx(0.5)


def test_prediction_score_one_hot_rows_always_pass() -> None:
    fs = _softmax_set([[1.0, 0.0], [0.0, 1.0]])
    for tau in (0.1, 0.5, 0.9, 1.0):
        assert prediction_score_estimate(fs, tau) == pytest.approx(1.0)


def test_prediction_score_uniform_rows_never_pass() -> None:
    fs = _softmax_set(np.full((5, 10), 0.1))
    assert prediction_score_estimate(fs, 0.8) == pytest.approx(0.0)


def test_prediction_score_monotone_in_threshold() -> None:
    rng = np.random.default_rng(6)
    raw = rng.random((200, 5)) + 1e-3
    fs = _softmax_set(raw / raw.sum(axis=1, keepdims=True))
    taus = np.linspace(0.05, 1.0, 20)
    values = [prediction_score_estimate(fs, float(t)) for t in taus]
    assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))


def test_entropy_score_one_hot_always_counted() -> None:
    fs = _softmax_set([[1.0, 0.0, 0.0]])
    assert entropy_score_estimate(fs, 0.01) == pytest.approx(1.0)


def test_entropy_score_uniform_never_counted() -> None:
    fs = _softmax_set(np.full((3, 4), 0.25))
    assert entropy_score_estimate(fs, 0.999) == pytest.approx(0.0)


def test_entropy_score_monotone_in_threshold() -> None:
    rng = np.random.default_rng(7)
    raw = rng.random((200, 5)) + 1e-3
    fs = _softmax_set(raw / raw.sum(axis=1, keepdims=True))
    taus = np.linspace(0.05, 1.0, 20)
    values = [entropy_score_estimate(fs, float(t)) for t in taus]
    assert all(a <= b + 1e-12 for a, b in zip(values, values[1:]))


def test_scores_require_softmax() -> None:
    bare = FeatureSet(features=np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(InputError):
        prediction_score_estimate(bare, 0.5)
    with pytest.raises(InputError):
        entropy_score_estimate(bare, 0.5)
    with pytest.raises(InputError):
        average_confidence(bare)


def test_average_confidence_is_mean_max() -> None:
    fs = _softmax_set([[0.95, 0.05], [0.6, 0.4]])
    assert average_confidence(fs) == pytest.approx((0.95 + 0.6) / 2, abs=1e-7)


# ---------------------------------------------------------------------------
# baseline representations


def test_baseline_representation_lengths_and_contents() -> None:
    rng = np.random.default_rng(8)
    feats = rng.normal(size=(100, 6)).astype(np.float32)
    raw = rng.random((100, 4)) + 1e-3
    fs = FeatureSet(features=feats, softmax=(raw / raw.sum(axis=1, keepdims=True)).astype(np.float32))
    train = gaussian_summary(fs)

    fd_vec = baseline_representation(fs, train, FD_ONLY)
    assert fd_vec.shape == (1,)
    assert fd_vec[0] == pytest.approx(frechet_distance(gaussian_summary(fs), train))

    ac_vec = baseline_representation(fs, train, AC_ONLY)
    assert ac_vec.shape == (1,)
    assert ac_vec[0] == pytest.approx(average_confidence(fs))

    fdst = baseline_representation(fs, train, FD_SIGMA_TAU)
    assert fdst.shape == (1 + 2 * 6,)
    feats64 = feats.astype(np.float64)
    assert fdst[1:7] == pytest.approx(feats64.mean(axis=0))
    assert fdst[7:] == pytest.approx(feats64.var(axis=0, ddof=1))


def test_baseline_representation_unknown_kind() -> None:
    fs = FeatureSet(features=np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(InputError):
        baseline_representation(fs, gaussian_summary(fs), "mmd")
