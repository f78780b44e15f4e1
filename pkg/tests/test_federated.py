import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from slicekit.domains import ENERGY_PROFILES, synthetic_energy_trace
from slicekit.ml.federated import (EmptyList, aggregate_weights, federated_training,
                                   forecast_test, train_test_split_series)
from slicekit.ml.metrics import LengthMismatch, mse
from slicekit.ml.recurrent import (Architecture, ArchitectureMismatch, ModelWeights,
                                   SeriesTooShort, TrainingConfig, init_weights)

ARCH = Architecture(5, 3)


def model(vals):
    return ModelWeights(ARCH, np.asarray(vals, dtype=float))


weights_st = st.lists(st.floats(-100, 100), min_size=ARCH.n_weights, max_size=ARCH.n_weights)


@given(weights_st)
def test_identity_and_idempotence(w):
    m = model(w)
    assert np.array_equal(aggregate_weights([m]).weights, m.weights)
    assert np.allclose(aggregate_weights([m, m, m]).weights, m.weights, rtol=1e-15, atol=1e-13)


@given(st.lists(weights_st, min_size=2, max_size=4))
def test_permutation_invariance(ws):
    ms = [model(w) for w in ws]
    base = aggregate_weights(ms).weights
    for perm in itertools.permutations(ms):
        assert np.allclose(aggregate_weights(list(perm)).weights, base, rtol=1e-12, atol=1e-12)


@given(weights_st, weights_st)
def test_two_model_mean(a, b):
    got = aggregate_weights([model(a), model(b)]).weights
    assert np.array_equal(got, (np.asarray(a) + np.asarray(b)) / 2)


def test_power_of_two_means_are_exact():
    # with dyadic inputs every partial sum and the /4 are exact
    rng = np.random.default_rng(0)
    ws = [rng.integers(-1000, 1000, ARCH.n_weights) / 8.0 for _ in range(4)]
    got = aggregate_weights([model(w) for w in ws]).weights
    expected = [sum(int(w[i] * 8) for w in ws) / 32.0 for i in range(ARCH.n_weights)]
    assert got.tolist() == expected


def test_linearity():
    rng = np.random.default_rng(1)
    a, b = (rng.normal(size=(3, ARCH.n_weights)) for _ in range(2))
    lhs = aggregate_weights([model(x + 2 * y) for x, y in zip(a, b)]).weights
    rhs = aggregate_weights([model(x) for x in a]).weights + 2 * aggregate_weights([model(y) for y in b]).weights
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_weighted_average():
    a, b = model(np.zeros(ARCH.n_weights)), model(np.ones(ARCH.n_weights))
    assert np.allclose(aggregate_weights([a, b], [1, 3]).weights, 0.75)
    assert np.array_equal(aggregate_weights([a, b], [2, 2]).weights, aggregate_weights([a, b]).weights)
    with pytest.raises(ValueError):
        aggregate_weights([a, b], [0, 0])


def test_errors():
    with pytest.raises(EmptyList):
        aggregate_weights([])
    with pytest.raises(ArchitectureMismatch):
        aggregate_weights([init_weights(ARCH, 0), init_weights(Architecture(5, 4), 0)])


def test_split_index():
    assert train_test_split_series(np.zeros(100)) == 80
    assert train_test_split_series(np.zeros(99)) == 79


def test_mse_dual_formula():
    rng = np.random.default_rng(0)
    p, a = rng.normal(size=50), rng.normal(size=50)
    direct = sum((x - y) ** 2 for x, y in zip(p, a)) / 50
    expanded = (np.sum(p * p) - 2 * np.sum(p * a) + np.sum(a * a)) / 50
    assert mse(p, a) == pytest.approx(direct, rel=1e-12)
    assert mse(p, a) == pytest.approx(expanded, rel=1e-9)
    with pytest.raises(LengthMismatch):
        mse([1.0], [1.0, 2.0])
    with pytest.raises(LengthMismatch):
        mse([], [])


def series(length=300):
    return {name: synthetic_energy_trace(ENERGY_PROFILES[name], length, seed=i)
            for i, name in enumerate(["compute", "iot"])}


def test_federated_improves_and_only_shares_weights():
    cfg = TrainingConfig(window=12, hidden=6, epochs=30)
    res = federated_training(series(), cfg, rounds=3)
    assert [r.round for r in res.rounds] == [1, 2, 3]
    for name in ("compute", "iot"):
        assert res.rounds[-1].mse_normalized[name] < res.rounds[0].mse_normalized[name]
        assert len(res.rounds[0].loss_history[name]) == 30
        scale = res.domains[[d.name for d in res.domains].index(name)].scaler
        ratio = res.rounds[-1].mse_kwh[name] / res.rounds[-1].mse_normalized[name]
        assert ratio == pytest.approx((scale.hi - scale.lo) ** 2, rel=1e-9)


def test_round_one_is_mean_of_local_fits():
    from slicekit.ml.recurrent import train_forecaster_local
    cfg = TrainingConfig(window=12, hidden=6, epochs=5)
    res = federated_training(series(), cfg, rounds=1)
    fits = [train_forecaster_local(d.train, cfg, scaler=d.scaler).weights.weights for d in res.domains]
    assert np.array_equal(res.global_weights.weights, (fits[0] + fits[1]) / 2)


def test_parallel_workers_match_serial():
    cfg = TrainingConfig(window=12, hidden=6, epochs=5)
    a = federated_training(series(), cfg, rounds=2)
    b = federated_training(series(), cfg, rounds=2, workers=2)
    assert np.array_equal(a.global_weights.weights, b.global_weights.weights)


def test_weighted_option_uses_pair_counts():
    s = series()
    s["iot"] = synthetic_energy_trace(ENERGY_PROFILES["iot"], 150, seed=1)
    cfg = TrainingConfig(window=12, hidden=6, epochs=3)
    plain = federated_training(s, cfg, rounds=1)
    weighted = federated_training(s, cfg, rounds=1, weighted=True)
    assert not np.array_equal(plain.global_weights.weights, weighted.global_weights.weights)


def test_forecast_test_and_short_series():
    cfg = TrainingConfig(window=12, hidden=6, epochs=3)
    res = federated_training(series(), cfg, rounds=1)
    pred, actual = forecast_test(res.global_weights, res.domains[0], 30)
    assert len(pred) == len(actual) == 30
    with pytest.raises(SeriesTooShort):
        federated_training({"x": np.ones(10)}, cfg, rounds=1)
