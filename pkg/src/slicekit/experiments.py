"""The two ML experiments as report-writing runs: DDoS classification and federated forecasting."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import LogicalClock, LifecyclePhase
from .ml.agent import MLAgent
from .ml.federated import FederatedResult, federated_training, forecast_test
from .ml.flows import CLASS_ORDER, train_test_split_indices
from .ml.knn import CrossValidationResult, cross_validate, knn_train
from .ml.recurrent import TrainingConfig
from .security import Drop, SecurityServices

GATED_BLOCK = "slice-builder"
TRACE_ORIGIN = "dom-im"


def _write(path: Path, header: Sequence[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _f(x: float) -> str:
    return repr(float(x))


# --- DDoS -------------------------------------------------------------------------------

@dataclass
class DdosReport:
    cv: CrossValidationResult
    k: int
    holdout_accuracy: float
    drops: dict[str, tuple[int, int]]  # class -> (flows, drops)
    files: dict[str, Path]

    @property
    def best_k(self) -> int:
        return self.cv.best_k


def replay_through_gate(model, X, y, *, fail_closed: bool = True,
                        security: Optional[SecurityServices] = None) -> dict[str, tuple[int, int]]:
    """Send each flow through the DDoS gate of a block whose agent holds ``model``."""
    sec = security or SecurityServices.create(LogicalClock(), token_seed=0, fail_closed=fail_closed)
    sec.gate.attach(GATED_BLOCK, MLAgent(GATED_BLOCK, model))
    flows, drops = Counter(), Counter()
    for x, label in zip(X, y):
        decision = sec.gate.ddos_gate(GATED_BLOCK, x, TRACE_ORIGIN, LifecyclePhase.OPERATION)
        flows[label] += 1
        drops[label] += isinstance(decision, Drop)
    return {c: (flows[c], drops[c]) for c in CLASS_ORDER if flows[c]}


def run_ddos_experiment(X: np.ndarray, y: np.ndarray, out_dir, *, k: int = 4,
                        k_range: Sequence[int] = range(1, 31), repeats: int = 10,
                        seed: int = 0) -> DdosReport:
    """Cross-validated k sweep, a k-model on the seeded 80/20 split, and a gate replay."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cv = cross_validate(X, y, k_range, repeats, seed)
    train, test = train_test_split_indices(len(X), 0.2, seed)
    model = knn_train(X[train], y[train], k)
    pred = model.predict(X[test])
    holdout = float(np.mean(pred == y[test]))
    drops = replay_through_gate(model, X[test], y[test])

    files = {}
    with open(out / "cv_runs.csv", "w", newline="") as fh:
        cv.write_run_log(fh)
    files["cv_runs"] = out / "cv_runs.csv"
    files["accuracy_vs_k"] = _write(out / "accuracy_vs_k.csv", ["k", "mean_accuracy", "runs"],
                                    [[kk, _f(v), repeats] for kk, v in cv.mean_accuracy.items()])
    means = cv.mean_accuracy
    files["summary"] = _write(out / "summary.csv", ["key", "value"], [
        ["flows", len(X)],
        ["classes", len(set(y))],
        ["best_k", cv.best_k],
        ["best_mean_accuracy", _f(means[cv.best_k])],
        ["k", k],
        ["mean_accuracy_at_k", _f(means[k]) if k in means else ""],
        ["holdout_accuracy_at_k", _f(holdout)],
        ["seed", seed],
    ])
    files["drops"] = _write(out / "drops.csv", ["class", "flows", "drops"],
                            [[c, n, d] for c, (n, d) in drops.items()])
    return DdosReport(cv, k, holdout, drops, files)


# --- federated energy forecasting ------------------------------------------------------------

@dataclass
class EnergyReport:
    result: FederatedResult
    files: dict[str, Path]


def run_energy_experiment(series: Mapping[str, object], out_dir, *,
                          config: TrainingConfig = TrainingConfig(), rounds: int = 5,
                          horizon: int = 30, workers: int = 1,
                          weighted: bool = False) -> EnergyReport:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = federated_training(series, config, rounds=rounds, workers=workers, weighted=weighted)
    files = {}
    files["losses"] = _write(out / "losses.csv", ["round", "domain", "epoch", "loss"], [
        [r.round, name, epoch, _f(loss)]
        for r in result.rounds for name, hist in r.loss_history.items()
        for epoch, loss in enumerate(hist, start=1)
    ])
    files["global_mse"] = _write(out / "global_mse.csv",
                                 ["round", "domain", "mse_normalized", "mse_kwh"], [
        [r.round, name, _f(r.mse_normalized[name]), _f(r.mse_kwh[name])]
        for r in result.rounds for name in r.mse_normalized
    ])
    files["split"] = _write(out / "split.csv",
                            ["domain", "length", "train_start", "train_end", "test_start", "test_end"],
                            [[d.name, len(d.values), 0, d.split, d.split, len(d.values)]
                             for d in result.domains])
    for d in result.domains:
        pred, actual = forecast_test(result.global_weights, d, horizon)
        files[f"forecast_{d.name}"] = _write(
            out / f"forecast_{d.name}.csv", ["step", "index", "predicted_kwh", "actual_kwh"],
            [[i + 1, d.split + i, _f(p), _f(a)] for i, (p, a) in enumerate(zip(pred, actual))])
    return EnergyReport(result, files)


def moving_average(values: Sequence[float], width: int = 10) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if len(v) < width:
        return np.empty(0)
    c = np.cumsum(np.concatenate([[0.0], v]))
    return (c[width:] - c[:-width]) / width


def is_nonincreasing(values: Sequence[float], tol: float = 0.0) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) <= tol * np.maximum(1.0, np.abs(v[:-1]))))
