"""ML-Agent: a Predictor API plus an insert/update/remove model life-cycle."""

from __future__ import annotations

import threading
from typing import Optional

import numpy as np

from ..core import SliceError
from ..domains import SeriesWindow
from .flows import FlowFeatureVector
from .knn import KNNFlowClassifier, knn_predict
from .recurrent import MinMaxSeriesScaler, ModelWeights, forecast


class ModelUnavailable(SliceError):
    pass


class PayloadKindMismatch(SliceError):
    pass


class ForecastModel:
    """A forecaster packaged for an agent: weights, scaler and default horizon."""

    def __init__(self, weights: ModelWeights, scaler: Optional[MinMaxSeriesScaler] = None,
                 horizon: int = 30):
        self.weights = weights
        self.scaler = scaler
        self.horizon = horizon

    def predict(self, context: SeriesWindow):
        return forecast(self.weights, context, self.horizon, self.scaler)


class MLAgent:
    """Serves predictions for one architecture block.

    Model swaps replace a single reference under a lock; a prediction reads
    that reference once, so it runs entirely on the old or the new model.
    """

    def __init__(self, agent_id: str, model=None):
        self.agent_id = agent_id
        self._model = model
        self._lock = threading.Lock()

    @property
    def model(self):
        with self._lock:
            return self._model

    def update_model(self, model) -> None:
        with self._lock:
            self._model = model

    insert_model = update_model

    def remove_model(self) -> None:
        with self._lock:
            self._model = None

    def predict(self, payload):
        model = self.model
        if model is None:
            raise ModelUnavailable(self.agent_id)
        if isinstance(model, KNNFlowClassifier):
            if isinstance(payload, SeriesWindow):
                raise PayloadKindMismatch("classifier agent got a series window")
            return knn_predict(model, payload)
        if isinstance(model, ForecastModel):
            if not isinstance(payload, SeriesWindow):
                raise PayloadKindMismatch("forecast agent needs a series window")
            return model.predict(payload)
        # any other object with predict(payload): stubs, external models
        return model.predict(payload)


def agent_predict(agent: MLAgent, payload):
    return agent.predict(payload)


def agent_update_model(agent: MLAgent, model) -> None:
    agent.update_model(model)


def agent_remove_model(agent: MLAgent) -> None:
    agent.remove_model()
