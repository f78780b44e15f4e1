import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone

from slicekit.domains import ENERGY_PROFILES, SeriesWindow, synthetic_energy_trace
from slicekit.experiments import is_nonincreasing, moving_average
from slicekit.ml.recurrent import (Architecture, ArchitectureMismatch, ContextTooShort,
                                   DivergedLoss, MinMaxSeriesScaler, ModelWeights,
                                   RecurrentForecaster, SeriesTooShort, TrainingConfig,
                                   forecast, forward, gradient_descent, init_weights,
                                   loss_and_grad, predict_next, read_model, supervised_pairs,
                                   train_forecaster_local, write_model)


def pairs(profile, n=200, window=30):
    s = synthetic_energy_trace(ENERGY_PROFILES[profile], n, seed=1)
    z = MinMaxSeriesScaler.fit(s.values).transform(s.values)
    return supervised_pairs(z, window)


def test_weight_count():
    for h in (1, 4, 16):
        arch = Architecture(30, h)
        assert arch.n_weights == 2 * h * h + 5 * h + 1
        assert init_weights(arch, 0).weights.shape == (arch.n_weights,)
    with pytest.raises(ArchitectureMismatch):
        ModelWeights(Architecture(30, 4), np.zeros(3))


def test_supervised_pairs():
    X, t = supervised_pairs(np.arange(10.0), 3)
    assert X.shape == (7, 3)
    assert np.array_equal(X[0], [0, 1, 2]) and t[0] == 3 and t[-1] == 9
    with pytest.raises(SeriesTooShort):
        supervised_pairs(np.arange(3.0), 3)


@pytest.mark.parametrize("profile", ["compute", "iot"])
def test_gradient_matches_central_differences(profile):
    X, t = pairs(profile)
    arch = Architecture(30, 16)
    flat, _ = gradient_descent(arch, init_weights(arch, 3).weights, X, t, 5, 0.2)
    _, grad = loss_and_grad(arch, flat, X, t)
    eps = 1e-5
    for i in np.random.default_rng(0).choice(arch.n_weights, 20, replace=False):
        up, down = flat.copy(), flat.copy()
        up[i] += eps
        down[i] -= eps
        num = (loss_and_grad(arch, up, X, t)[0] - loss_and_grad(arch, down, X, t)[0]) / (2 * eps)
        rel = abs(grad[i] - num) / max(abs(grad[i]), abs(num), 1e-12)
        assert rel < 1e-4, (i, grad[i], num)


def scalar_cell_forward(arch, flat, window):
    """Per-unit Python loops over the gated-update cell, sharing no code with the model."""
    h = arch.hidden
    it = iter(float(v) for v in flat)
    take = lambda n: [next(it) for _ in range(n)]
    Wz, Uz, bz = take(h), [take(h) for _ in range(h)], take(h)
    Wc, Uc, bc = take(h), [take(h) for _ in range(h)], take(h)
    Wy, by = take(h), take(1)[0]
    state = [0.0] * h
    for x in window:
        z = [1 / (1 + math.exp(-(x * Wz[i] + sum(Uz[i][j] * state[j] for j in range(h)) + bz[i])))
             for i in range(h)]
        c = [math.tanh(x * Wc[i] + sum(Uc[i][j] * state[j] for j in range(h)) + bc[i])
             for i in range(h)]
        state = [(1 - z[i]) * state[i] + z[i] * c[i] for i in range(h)]
    return sum(a * b for a, b in zip(state, Wy)) + by


def test_forward_and_loss_against_scalar_oracle():
    X, t = pairs("iot", n=60, window=8)
    arch = Architecture(8, 5)
    w = init_weights(arch, 0).weights + np.random.default_rng(1).normal(0, 0.3, arch.n_weights)
    y = forward(arch, w, X)
    ref = [scalar_cell_forward(arch, w, row) for row in X]
    assert np.allclose(y, ref, rtol=1e-12, atol=1e-12)
    loss, _ = loss_and_grad(arch, w, X, t)
    assert math.isclose(loss, math.fsum((a - b) ** 2 for a, b in zip(ref, t)) / len(t), rel_tol=1e-10)


def test_constant_series_converges():
    fit = train_forecaster_local(np.full(80, 7.0), TrainingConfig(epochs=200))
    assert min(fit.loss_history) < 1e-6


@pytest.mark.parametrize("profile", ["compute", "iot", "fiveg"])
def test_moving_average_loss_nonincreasing(profile):
    s = synthetic_energy_trace(ENERGY_PROFILES[profile], 400, seed=0)
    fit = train_forecaster_local(s, TrainingConfig(epochs=100))
    assert is_nonincreasing(moving_average(fit.loss_history, 10))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_errors():
    with pytest.raises(SeriesTooShort):
        train_forecaster_local(np.ones(30), TrainingConfig(window=30))
    s = synthetic_energy_trace(ENERGY_PROFILES["compute"], 120, seed=0)
    with pytest.raises(DivergedLoss):
        train_forecaster_local(s, TrainingConfig(learning_rate=1e200, epochs=5))
    w = init_weights(Architecture(30, 16), 0)
    with pytest.raises(ContextTooShort):
        forecast(w, np.ones(10), 5)


def test_forecast_horizons():
    s = synthetic_energy_trace(ENERGY_PROFILES["compute"], 200, seed=0)
    fit = train_forecaster_local(s, TrainingConfig(epochs=20))
    assert len(forecast(fit.weights, s, 0, fit.scaler)) == 0
    out = forecast(fit.weights, SeriesWindow(s.values, start_index=5), 30, fit.scaler)
    assert len(out) == 30 and out.start_index == 205
    assert np.all(np.isfinite(out.values))


def test_one_step_forecast_equals_direct_prediction():
    s = synthetic_energy_trace(ENERGY_PROFILES["iot"], 200, seed=0)
    fit = train_forecaster_local(s, TrainingConfig(epochs=10))
    ctx = s.values[-30:]
    direct = fit.scaler.inverse_transform(predict_next(fit.weights, fit.scaler.transform(ctx)))
    assert forecast(fit.weights, ctx, 1, fit.scaler).values[0] == direct[0]


def test_iterated_forecast_feeds_back_predictions():
    s = synthetic_energy_trace(ENERGY_PROFILES["iot"], 200, seed=0)
    fit = train_forecaster_local(s, TrainingConfig(epochs=10))
    two = forecast(fit.weights, s, 2, fit.scaler).values
    extended = np.concatenate([s.values, two[:1]])
    assert forecast(fit.weights, extended, 1, fit.scaler).values[0] == pytest.approx(two[1], rel=1e-12)


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50))
def test_scaler_round_trip(values):
    sc = MinMaxSeriesScaler.fit(values)
    back = sc.inverse_transform(sc.transform(values))
    span = max(sc.hi - sc.lo, 1.0)
    if sc.hi > sc.lo:
        assert np.all(np.abs(back - np.asarray(values)) <= 1e-9 * span)
    z = sc.transform(values)
    assert z.min() >= 0.0 and z.max() <= 1.0


def test_model_file_round_trip_bit_exact():
    s = synthetic_energy_trace(ENERGY_PROFILES["fiveg"], 120, seed=0)
    fit = train_forecaster_local(s, TrainingConfig(epochs=3, hidden=4))
    buf = io.StringIO()
    write_model(buf, fit.weights, fit.scaler)
    buf.seek(0)
    w, sc = read_model(buf)
    assert w.architecture == fit.weights.architecture
    assert np.array_equal(w.weights, fit.weights.weights)
    assert sc == fit.scaler


def test_training_is_deterministic():
    s = synthetic_energy_trace(ENERGY_PROFILES["compute"], 120, seed=0)
    a = train_forecaster_local(s, TrainingConfig(epochs=5, seed=2))
    b = train_forecaster_local(s, TrainingConfig(epochs=5, seed=2))
    assert np.array_equal(a.weights.weights, b.weights.weights)
    assert a.loss_history == b.loss_history


def test_estimator_api():
    s = synthetic_energy_trace(ENERGY_PROFILES["compute"], 150, seed=0)
    est = RecurrentForecaster(hidden=4, epochs=5)
    assert clone(est).get_params() == est.get_params()
    est.fit(s.values)
    pred = est.predict(np.stack([s.values[:30], s.values[1:31]]))
    assert pred.shape == (2,)
    assert len(est.forecast(s, 3)) == 3
    with pytest.raises(ContextTooShort):
        est.predict(np.ones((1, 5)))
