"""Regressor: backprop correctness, training behavior, persistence."""

from __future__ import annotations

import numpy as np
import pytest

from autoeval.errors import ConfigError, FormatError, InputError
from autoeval.regress import (
    RegressorModel,
    TrainConfig,
    fit,
    gradient_check,
    init_model,
    load_model,
    predict,
    predict_batch,
    save_model,
)


def test_gradient_check_small_models() -> None:
    rng = np.random.default_rng(0)
    for trial in range(20):
        model = init_model([8, 16, 8, 1], seed=trial)
        rep = rng.normal(size=8)
        target = float(rng.uniform(0, 1))
        err = gradient_check(model, rep, target)
        assert err < 1e-4, f"trial {trial}: max relative error {err}"


def test_gradient_check_zero_input_zero_target() -> None:
    model = init_model([8, 16, 8, 1], seed=5)
    err = gradient_check(model, np.zeros(8), 0.0)
    assert np.isfinite(err)
    assert err < 1e-4


def test_gradient_check_is_deterministic() -> None:
    model = init_model([6, 16, 8, 1], seed=9)
    rep = np.random.default_rng(9).normal(size=6)
    assert gradient_check(model, rep, 0.3) == gradient_check(model, rep, 0.3)


def test_zero_model_predicts_one_half() -> None:
    dims = [4, 512, 128, 1]
    model = RegressorModel(
        layer_dims=dims,
        weights=[np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
        biases=[np.zeros(b) for b in dims[1:]],
        input_mean=np.zeros(4),
        input_scale=np.ones(4),
    )
    assert predict(model, np.array([1.0, -2.0, 0.5, 3.0])) == pytest.approx(0.5)


def test_predict_output_in_unit_interval() -> None:
    rng = np.random.default_rng(1)
    model = init_model([5, 512, 128, 1], seed=1)
    for _ in range(50):
        value = predict(model, rng.normal(scale=10.0, size=5))
        assert 0.0 < value < 1.0


def test_predict_rejects_bad_inputs() -> None:
    model = init_model([4, 8, 1], seed=0)
    with pytest.raises(InputError):
        predict(model, np.zeros(5))
    with pytest.raises(InputError):
        predict(model, np.array([0.0, np.nan, 0.0, 0.0]))


def test_parameter_count_formula() -> None:
    model = init_model([8, 16, 8, 1], seed=0)
    assert model.parameter_count == 8 * 16 + 16 + 16 * 8 + 8 + 8 * 1 + 1


def _copied_pairs(rng: np.random.Generator):
    x = rng.normal(size=6)
    return [(x.copy(), 0.7) for _ in range(10)], x


def test_fit_overfits_single_repeated_pair() -> None:
    rng = np.random.default_rng(2)
    pairs, x = _copied_pairs(rng)
    model = fit(pairs, TrainConfig(seed=0, epochs=400))
    assert abs(predict(model, x) - 0.7) < 1e-3


def test_fit_same_seed_identical_parameters() -> None:
    rng = np.random.default_rng(3)
    pairs = [(rng.normal(size=5), float(rng.uniform(0, 1))) for _ in range(20)]
    a = fit(pairs, TrainConfig(seed=7, epochs=5))
    b = fit(pairs, TrainConfig(seed=7, epochs=5))
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    for ba, bb in zip(a.biases, b.biases):
        assert np.array_equal(ba, bb)


def test_fit_is_invariant_to_pair_order() -> None:
    rng = np.random.default_rng(4)
    pairs = [(rng.normal(size=5), float(rng.uniform(0, 1))) for _ in range(20)]
    shuffled = [pairs[i] for i in rng.permutation(20)]
    a = fit(pairs, TrainConfig(seed=3, epochs=5))
    b = fit(shuffled, TrainConfig(seed=3, epochs=5))
    probe = rng.normal(size=5)
    assert predict(a, probe) == predict(b, probe)


def test_fit_constant_targets_converges_to_constant() -> None:
    rng = np.random.default_rng(5)
    pairs = [(rng.normal(size=4), 0.4) for _ in range(30)]
    model = fit(pairs, TrainConfig(seed=0, epochs=200))
    for vec, _ in pairs[:10]:
        assert predict(model, vec) == pytest.approx(0.4, abs=1e-2)


def test_fit_first_epoch_reduces_training_loss_across_seeds() -> None:
    rng = np.random.default_rng(6)
    for seed in range(20):
        pairs = [(rng.normal(size=6), float(rng.uniform(0, 1))) for _ in range(24)]
        model = fit(pairs, TrainConfig(seed=seed, epochs=1))
        history = model.history
        assert history is not None
        assert history["train_loss"][1] <= history["train_loss"][0]


def test_fit_uses_explicit_validation_pairs_for_checkpointing() -> None:
    rng = np.random.default_rng(7)
    pairs = [(rng.normal(size=4), float(rng.uniform(0, 1))) for _ in range(16)]
    val = [(rng.normal(size=4), float(rng.uniform(0, 1))) for _ in range(8)]
    model = fit(pairs, TrainConfig(seed=0, epochs=8), val_pairs=val)
    history = model.history
    assert history is not None
    assert len(history["val_loss"]) == 9  # init + 8 epochs
    # The returned parameters must reproduce the best recorded val loss.
    vx = np.array([v for v, _ in val])
    vy = np.array([t for _, t in val])
    preds = predict_batch(model, vx)
    assert float(np.mean((preds - vy) ** 2)) == pytest.approx(min(history["val_loss"]), abs=1e-12)


def test_fit_input_validation() -> None:
    with pytest.raises(InputError):
        fit([(np.zeros(3), 0.5)], TrainConfig())
    with pytest.raises(InputError):
        fit([(np.zeros(3), 0.5), (np.zeros(4), 0.5)], TrainConfig())
    with pytest.raises(InputError):
        fit([(np.zeros(3), 0.5), (np.zeros(3), 1.5)], TrainConfig())


def test_train_config_validation() -> None:
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(val_fraction=1.0)


def test_model_round_trip_predicts_identically(tmp_path) -> None:
    rng = np.random.default_rng(8)
    pairs = [(rng.normal(size=5), float(rng.uniform(0, 1))) for _ in range(20)]
    model = fit(pairs, TrainConfig(seed=1, epochs=3))
    path = tmp_path / "model.json"
    save_model(model, path)
    back = load_model(path)
    for _ in range(100):
        probe = rng.normal(size=5)
        assert predict(back, probe) == predict(model, probe)


def test_load_model_rejects_truncated_file(tmp_path) -> None:
    model = init_model([3, 8, 1], seed=0)
    path = tmp_path / "model.json"
    save_model(model, path)
    path.write_text(path.read_text()[:50])
    with pytest.raises(FormatError):
        load_model(path)


def test_load_model_rejects_mismatched_dims(tmp_path) -> None:
    import json

    model = init_model([3, 8, 1], seed=0)
    path = tmp_path / "model.json"
    save_model(model, path)
    data = json.loads(path.read_text())
    data["layer_dims"] = [4, 8, 1]
    path.write_text(json.dumps(data))
    with pytest.raises(FormatError):
        load_model(path)
