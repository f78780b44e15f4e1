"""K-nearest-neighbours flow classifier with min-max normalization and deterministic ties."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..core import SliceError
from .flows import CLASS_ORDER, FlowFeatureVector, TrafficClass, train_test_split_indices


class EmptyDataset(SliceError):
    pass


class KTooLarge(SliceError):
    pass


class DimensionMismatch(SliceError):
    pass


def class_order(labels) -> list:
    """Traffic classes in enumeration order; any other label set sorts naturally."""
    present = set(labels)
    if present <= set(CLASS_ORDER):
        return [c for c in CLASS_ORDER if c in present]
    return sorted(present)


class KNNFlowClassifier(ClassifierMixin, BaseEstimator):
    """Majority vote among the ``n_neighbors`` closest training flows.

    Features are min-max scaled with the training range (constant features map
    to 0.5) and compared by Euclidean distance. Neighbours at equal distance are
    taken in training order. A tied vote goes to the class whose tied neighbours
    have the smallest summed distance, then to the earliest class in
    ``classes_``.
    """

    def __init__(self, n_neighbors: int = 4):
        self.n_neighbors = n_neighbors

    def fit(self, X, y):
        X = np.asarray(X, dtype=float) if len(X) else np.empty((0, 0))
        if len(X) == 0:
            raise EmptyDataset("cannot train on an empty dataset")
        X = check_array(X, dtype=float)
        y = np.asarray([getattr(v, "value", v) for v in y], dtype=object)
        if len(y) != len(X):
            raise ValueError("X and y have different lengths")
        if not 1 <= self.n_neighbors <= len(X):
            raise KTooLarge(f"k={self.n_neighbors} needs at least that many stored points, have {len(X)}")
        self.min_ = X.min(axis=0)
        self.max_ = X.max(axis=0)
        self.n_features_in_ = X.shape[1]
        self.points_ = self._normalize(X)
        self.classes_ = np.array(class_order(y), dtype=object)
        code = {c: i for i, c in enumerate(self.classes_)}
        self.labels_ = np.array([code[v] for v in y], dtype=int)
        return self

    def _normalize(self, X: np.ndarray) -> np.ndarray:
        span = self.max_ - self.min_
        const = span == 0
        out = (X - self.min_) / np.where(const, 1.0, span)
        out[:, const] = 0.5
        return out

    def _check_query(self, X) -> np.ndarray:
        check_is_fitted(self, "points_")
        if isinstance(X, FlowFeatureVector):
            X = X.features
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return check_array(X, dtype=float)

    def kneighbors(self, X) -> tuple[np.ndarray, np.ndarray]:
        Q = self._normalize(self._check_query(X))
        k = self.n_neighbors
        dist = np.sqrt(((Q[:, None, :] - self.points_[None, :, :]) ** 2).sum(axis=2))
        order = np.argsort(dist, axis=1, kind="stable")[:, :k]
        return np.take_along_axis(dist, order, axis=1), order

    def _vote(self, dist: np.ndarray, idx: np.ndarray) -> int:
        labels = self.labels_[idx]
        counts = np.bincount(labels, minlength=len(self.classes_))
        best = np.flatnonzero(counts == counts.max())
        if len(best) == 1:
            return int(best[0])
        sums = [math.fsum(dist[labels == c]) for c in best]
        lowest = min(sums)
        return int(best[sums.index(lowest)])

    def predict(self, X) -> np.ndarray:
        dist, idx = self.kneighbors(X)
        codes = [self._vote(d, i) for d, i in zip(dist, idx)]
        return self.classes_[codes]


KnnModel = KNNFlowClassifier


def knn_train(X, y, k: int = 4) -> KNNFlowClassifier:
    return KNNFlowClassifier(n_neighbors=k).fit(X, y)


def knn_predict(model: KNNFlowClassifier, x) -> TrafficClass | str:
    label = model.predict(x)[0]
    return TrafficClass(label) if label in CLASS_ORDER else label


@dataclass(frozen=True)
class CvRun:
    k: int
    run: int
    seed: int
    accuracy: float


@dataclass
class CrossValidationResult:
    runs: list[CvRun]

    @property
    def mean_accuracy(self) -> dict[int, float]:
        by_k: dict[int, list[float]] = {}
        for r in self.runs:
            by_k.setdefault(r.k, []).append(r.accuracy)
        return {k: math.fsum(v) / len(v) for k, v in sorted(by_k.items())}

    @property
    def best_k(self) -> int:
        means = self.mean_accuracy
        top = max(means.values())
        return min(k for k, v in means.items() if v == top)

    def write_run_log(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "run", "seed", "accuracy"])
        for r in self.runs:
            w.writerow([r.k, r.run, r.seed, repr(r.accuracy)])


def read_run_log(fh) -> list[CvRun]:
    rows = list(csv.DictReader(fh))
    return [CvRun(int(r["k"]), int(r["run"]), int(r["seed"]), float(r["accuracy"])) for r in rows]


def cross_validate(X, y, k_range: Sequence[int] = range(1, 31), repeats: int = 10,
                   seed: int = 0, test_fraction: float = 0.2) -> CrossValidationResult:
    """Mean accuracy per k over ``repeats`` seeded random 80/20 re-splits.

    Run ``r`` uses split seed ``seed + r`` for every k, so curves compare k on
    identical splits.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray([getattr(v, "value", v) for v in y], dtype=object)
    runs = []
    splits = [train_test_split_indices(len(X), test_fraction, seed + r) for r in range(repeats)]
    for k in k_range:
        for r, (train, test) in enumerate(splits):
            model = knn_train(X[train], y[train], k)
            acc = float(np.mean(model.predict(X[test]) == y[test]))
            runs.append(CvRun(k, r, seed + r, acc))
    return CrossValidationResult(runs)
