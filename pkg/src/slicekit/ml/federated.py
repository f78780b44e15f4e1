"""Federated averaging of locally trained forecasters."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from ..core import SliceError
from .metrics import mse
from .recurrent import (ArchitectureMismatch, MinMaxSeriesScaler, ModelWeights, SeriesTooShort,
                        TrainingConfig, _values, forecast, init_weights, predict_next,
                        supervised_pairs, train_forecaster_local)


class EmptyList(SliceError):
    pass


def aggregate_weights(models: Sequence[ModelWeights],
                      sample_counts: Optional[Sequence[int]] = None) -> ModelWeights:
    """Element-wise mean of the weight vectors; weighted by ``sample_counts`` if given."""
    if not models:
        raise EmptyList("nothing to aggregate")
    arch = models[0].architecture
    for m in models[1:]:
        if m.architecture != arch:
            raise ArchitectureMismatch(f"{m.architecture} != {arch}")
    stack = np.stack([m.weights for m in models])
    if sample_counts is None:
        mean = stack.sum(axis=0) / len(models)
    else:
        w = np.asarray(sample_counts, dtype=float)
        if len(w) != len(models) or np.any(w < 0) or w.sum() == 0:
            raise ValueError("sample counts must be non-negative, one per model, not all zero")
        mean = (w[:, None] * stack).sum(axis=0) / w.sum()
    return ModelWeights(arch, mean, dict(models[0].hyperparameters))


def train_test_split_series(values, train_fraction: float = 0.8) -> int:
    """Index of the first test point: the first ``floor(0.8 n)`` values train."""
    return int(math.floor(len(values) * train_fraction))


@dataclass
class DomainData:
    name: str
    values: np.ndarray
    split: int
    scaler: MinMaxSeriesScaler

    @property
    def train(self) -> np.ndarray:
        return self.values[:self.split]

    def test_pairs(self, window: int):
        """Windows whose target lies in the test part; context may reach into training data."""
        z = self.scaler.transform(self.values)
        X, t = supervised_pairs(z, window)
        first = self.split - window
        return X[first:], t[first:]


@dataclass
class RoundResult:
    round: int
    global_weights: ModelWeights
    # domain -> per-epoch local loss history of this round
    loss_history: dict[str, list[float]]
    mse_normalized: dict[str, float]
    mse_kwh: dict[str, float]


@dataclass
class FederatedResult:
    domains: list[DomainData]
    rounds: list[RoundResult] = field(default_factory=list)

    @property
    def global_weights(self) -> ModelWeights:
        return self.rounds[-1].global_weights


def evaluate(weights: ModelWeights, domain: DomainData) -> tuple[float, float]:
    X, t = domain.test_pairs(weights.architecture.window)
    y = predict_next(weights, X)
    kwh_pred = domain.scaler.inverse_transform(y)
    kwh_true = domain.scaler.inverse_transform(t)
    return mse(y, t), mse(kwh_pred, kwh_true)


def federated_training(series: Mapping[str, object], config: TrainingConfig = TrainingConfig(),
                       rounds: int = 5, train_fraction: float = 0.8,
                       workers: int = 1, weighted: bool = False) -> FederatedResult:
    """Local training -> aggregation -> redistribution, ``rounds`` times.

    Each domain scales with its own training range and never shares raw data;
    only weight vectors reach the aggregator. Every round trains
    ``config.epochs`` local epochs starting from the current global model.
    With ``weighted`` the average counts each domain by its training pairs.
    """
    domains = []
    for name, s in series.items():
        values = _values(s)
        split = train_test_split_series(values, train_fraction)
        if split < config.window + 1 or len(values) - split < 1:
            raise SeriesTooShort(f"{name}: {len(values)} values is too short for window {config.window}")
        domains.append(DomainData(name, values, split, MinMaxSeriesScaler.fit(values[:split])))
    result = FederatedResult(domains)
    global_w = init_weights(config.architecture, config.seed)

    def local(d: DomainData):
        return train_forecaster_local(d.train, config, initial=global_w, scaler=d.scaler)

    for r in range(1, rounds + 1):
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                locals_ = list(pool.map(local, domains))
        else:
            locals_ = [local(d) for d in domains]
        # barrier: aggregate only once every local run has finished
        counts = [d.split - config.window for d in domains] if weighted else None
        global_w = aggregate_weights([w for w, _, _ in locals_], counts)
        mse_n, mse_k = {}, {}
        for d in domains:
            mse_n[d.name], mse_k[d.name] = evaluate(global_w, d)
        result.rounds.append(RoundResult(
            r, global_w, {d.name: h for d, (_, h, _) in zip(domains, locals_)}, mse_n, mse_k))
    return result


def forecast_test(weights: ModelWeights, domain: DomainData, horizon: int = 30):
    """Forecast ``horizon`` steps from the end of training; returns (predicted, actual) in kWh."""
    horizon = min(horizon, len(domain.values) - domain.split)
    context = domain.values[:domain.split]
    if horizon == 0:
        return np.empty(0), np.empty(0)
    pred = forecast(weights, context, horizon, domain.scaler)
    return pred.values, domain.values[domain.split:domain.split + horizon]
