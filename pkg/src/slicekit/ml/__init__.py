"""AI management and ML-Agents: KNN flow classification and federated energy forecasting."""

from .agent import MLAgent, ModelUnavailable, PayloadKindMismatch, ForecastModel
from .federated import aggregate_weights, federated_training
from .flows import FEATURES, FlowFeatureVector, TrafficClass, make_synthetic_flows, read_flow_csv
from .knn import KNNFlowClassifier, cross_validate, knn_predict, knn_train
from .metrics import mse
from .recurrent import (ModelWeights, RecurrentForecaster, TrainingConfig, forecast,
                        train_forecaster_local)

__all__ = [
    "MLAgent", "ModelUnavailable", "PayloadKindMismatch", "ForecastModel",
    "aggregate_weights", "federated_training",
    "FEATURES", "FlowFeatureVector", "TrafficClass", "make_synthetic_flows", "read_flow_csv",
    "KNNFlowClassifier", "cross_validate", "knn_predict", "knn_train", "mse",
    "ModelWeights", "RecurrentForecaster", "TrainingConfig", "forecast", "train_forecaster_local",
]
