"""Single-layer gated recurrent forecaster trained by full-batch gradient descent.

The cell keeps an update gate and a tanh candidate:

    z_t = sigmoid(x_t * Wz + h_{t-1} @ Uz.T + bz)
    c_t = tanh(x_t * Wc + h_{t-1} @ Uc.T + bc)
    h_t = (1 - z_t) * h_{t-1} + z_t * c_t

and a linear read-out ``y = h_w @ Wy + by`` predicts the value after a window
of ``w`` inputs. Gradients come from backpropagation through time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, TextIO, Union

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ..core import SliceError
from ..domains import SeriesWindow

CELL_NAME = "gated-update"


class SeriesTooShort(SliceError):
    pass


class DivergedLoss(SliceError):
    pass


class ContextTooShort(SliceError):
    pass


class ArchitectureMismatch(SliceError):
    pass


@dataclass(frozen=True)
class Architecture:
    window: int = 30
    hidden: int = 16
    horizon: int = 1
    cell: str = CELL_NAME

    @property
    def n_weights(self) -> int:
        h = self.hidden
        return 2 * h * h + 5 * h + 1


@dataclass(frozen=True)
class TrainingConfig:
    window: int = 30
    hidden: int = 16
    learning_rate: float = 0.2
    epochs: int = 100
    seed: int = 0
    clip_norm: Optional[float] = None

    @property
    def architecture(self) -> Architecture:
        return Architecture(self.window, self.hidden)


@dataclass(frozen=True)
class ModelWeights:
    architecture: Architecture
    weights: np.ndarray
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.shape != (self.architecture.n_weights,):
            raise ArchitectureMismatch(
                f"expected {self.architecture.n_weights} weights, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class MinMaxSeriesScaler:
    lo: float
    hi: float

    @classmethod
    def fit(cls, values) -> "MinMaxSeriesScaler":
        values = np.asarray(values, dtype=float)
        return cls(float(values.min()), float(values.max()))

    def transform(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        span = self.hi - self.lo
        if span == 0:
            return np.full_like(values, 0.5)
        return (values - self.lo) / span

    def inverse_transform(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        span = self.hi - self.lo
        if span == 0:
            return np.full_like(values, self.lo)
        return values * span + self.lo


# --- parameter packing ------------------------------------------------------------

def unpack(arch: Architecture, flat: np.ndarray) -> dict[str, np.ndarray]:
    h = arch.hidden
    shapes = [("Wz", (h,)), ("Uz", (h, h)), ("bz", (h,)),
              ("Wc", (h,)), ("Uc", (h, h)), ("bc", (h,)),
              ("Wy", (h,)), ("by", (1,))]
    out, pos = {}, 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        out[name] = flat[pos:pos + size].reshape(shape)
        pos += size
    return out


def pack(params: dict[str, np.ndarray]) -> np.ndarray:
    order = ["Wz", "Uz", "bz", "Wc", "Uc", "bc", "Wy", "by"]
    return np.concatenate([np.ravel(params[k]) for k in order])


def init_weights(arch: Architecture, seed: int) -> ModelWeights:
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(arch.hidden)
    flat = rng.uniform(-scale, scale, arch.n_weights)
    p = unpack(arch, flat)
    p["bz"][:] = 0.0
    p["bc"][:] = 0.0
    p["by"][:] = 0.0
    return ModelWeights(arch, pack(p))


# --- forward / backward --------------------------------------------------------------

def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def forward(arch: Architecture, flat: np.ndarray, X: np.ndarray, keep: bool = False):
    """Predict the next value for each row of ``X`` (shape n x window)."""
    p = unpack(arch, flat)
    n = X.shape[0]
    H = np.zeros((n, arch.hidden))
    cache = []
    for t in range(X.shape[1]):
        x = X[:, t:t + 1]
        Z = _sigmoid(x * p["Wz"] + H @ p["Uz"].T + p["bz"])
        C = np.tanh(x * p["Wc"] + H @ p["Uc"].T + p["bc"])
        if keep:
            cache.append((x, H, Z, C))
        H = (1.0 - Z) * H + Z * C
    y = H @ p["Wy"] + p["by"][0]
    return (y, cache, H) if keep else y


def loss_and_grad(arch: Architecture, flat: np.ndarray, X: np.ndarray, target: np.ndarray):
    p = unpack(arch, flat)
    y, cache, H = forward(arch, flat, X, keep=True)
    n = X.shape[0]
    err = y - target
    loss = float(np.mean(err ** 2))
    g = {k: np.zeros_like(v) for k, v in p.items()}
    dy = 2.0 * err / n
    g["Wy"] = H.T @ dy
    g["by"] = np.array([dy.sum()])
    dH = dy[:, None] * p["Wy"][None, :]
    for x, H_prev, Z, C in reversed(cache):
        dZ = dH * (C - H_prev)
        dC = dH * Z
        daz = dZ * Z * (1.0 - Z)
        dac = dC * (1.0 - C * C)
        g["Wz"] += (x * daz).sum(axis=0)
        g["Wc"] += (x * dac).sum(axis=0)
        g["Uz"] += daz.T @ H_prev
        g["Uc"] += dac.T @ H_prev
        g["bz"] += daz.sum(axis=0)
        g["bc"] += dac.sum(axis=0)
        dH = dH * (1.0 - Z) + daz @ p["Uz"] + dac @ p["Uc"]
    return loss, pack(g)


def supervised_pairs(values: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Every window of ``window`` consecutive values paired with the value after it."""
    values = np.asarray(values, dtype=float)
    n = len(values) - window
    if n < 1:
        raise SeriesTooShort(f"need at least {window + 1} values, got {len(values)}")
    X = np.lib.stride_tricks.sliding_window_view(values, window)[:n].copy()
    return X, values[window:].copy()


def _values(series) -> np.ndarray:
    if isinstance(series, SeriesWindow):
        return series.values
    return np.asarray(series, dtype=float)


def gradient_descent(arch: Architecture, start: np.ndarray, X: np.ndarray, target: np.ndarray,
                     epochs: int, learning_rate: float,
                     clip_norm: Optional[float] = None) -> tuple[np.ndarray, list[float]]:
    """Full-batch descent; ``history[i]`` is the loss before update ``i``."""
    flat = np.array(start, dtype=float)
    history = []
    for _ in range(epochs):
        loss, grad = loss_and_grad(arch, flat, X, target)
        if not math.isfinite(loss):
            raise DivergedLoss(f"loss became {loss} after {len(history)} epochs")
        history.append(loss)
        if clip_norm is not None:
            norm = float(np.linalg.norm(grad))
            if norm > clip_norm:
                grad = grad * (clip_norm / norm)
        flat -= learning_rate * grad
    if not np.all(np.isfinite(flat)):
        raise DivergedLoss("weights became non-finite")
    return flat, history


class LocalFit(NamedTuple):
    weights: ModelWeights
    loss_history: list
    scaler: MinMaxSeriesScaler


def train_forecaster_local(series, config: TrainingConfig = TrainingConfig(),
                           initial: Optional[ModelWeights] = None,
                           scaler: Optional[MinMaxSeriesScaler] = None) -> LocalFit:
    """Train on one domain's series; returns ``(weights, loss_history, scaler)``.

    The series is min-max scaled to [0, 1] (with ``scaler`` when given, else
    fitted here) and cut into window -> next-value pairs.
    """
    values = _values(series)
    arch = config.architecture
    if len(values) < arch.window + 1:
        raise SeriesTooShort(f"need at least {arch.window + 1} values, got {len(values)}")
    if not all(math.isfinite(v) for v in (config.learning_rate,)) or config.epochs < 0:
        raise ValueError("learning rate must be finite and epochs >= 0")
    scaler = scaler or MinMaxSeriesScaler.fit(values)
    X, target = supervised_pairs(scaler.transform(values), arch.window)
    if initial is None:
        initial = init_weights(arch, config.seed)
    elif initial.architecture != arch:
        raise ArchitectureMismatch(f"{initial.architecture} != {arch}")
    flat, history = gradient_descent(arch, initial.weights, X, target, config.epochs,
                                     config.learning_rate, config.clip_norm)
    hyper = {"lr": config.learning_rate, "epochs": config.epochs, "seed": config.seed}
    return LocalFit(ModelWeights(arch, flat, hyper), history, scaler)


def predict_next(weights: ModelWeights, windows: np.ndarray) -> np.ndarray:
    """Direct one-step output for normalized windows (n x window)."""
    windows = np.atleast_2d(np.asarray(windows, dtype=float))
    return forward(weights.architecture, weights.weights, windows)


def forecast(weights: ModelWeights, context, horizon: int = 30,
             scaler: Optional[MinMaxSeriesScaler] = None) -> SeriesWindow | np.ndarray:
    """Iterated one-step forecast in kWh.

    Each prediction is appended to the (normalized) context before the next
    step. ``scaler`` maps kWh to model units; it defaults to the context's own
    range. Returns a SeriesWindow continuing the context's index, or an empty
    array for ``horizon == 0``.
    """
    values = _values(context)
    w = weights.architecture.window
    if len(values) < w:
        raise ContextTooShort(f"need {w} context values, got {len(values)}")
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if horizon == 0:
        return np.empty(0)
    scaler = scaler or MinMaxSeriesScaler.fit(values)
    buf = list(scaler.transform(values[-w:]))
    out = []
    for _ in range(horizon):
        nxt = float(predict_next(weights, np.array(buf[-w:]))[0])
        out.append(nxt)
        buf.append(nxt)
    start = (context.start_index + len(values)) if isinstance(context, SeriesWindow) else len(values)
    return SeriesWindow(scaler.inverse_transform(np.array(out)), start)


# --- model files -------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_model(fh: TextIO, model: ModelWeights, scaler: Optional[MinMaxSeriesScaler] = None) -> None:
    a = model.architecture
    header = [f"cell={a.cell}", f"window={a.window}", f"hidden={a.hidden}", f"horizon={a.horizon}",
              f"n={a.n_weights}"]
    for k, v in sorted(model.hyperparameters.items()):
        header.append(f"{k}={_fmt(v) if isinstance(v, float) else v}")
    if scaler is not None:
        header += [f"scale_min={_fmt(scaler.lo)}", f"scale_max={_fmt(scaler.hi)}"]
    fh.write(" ".join(header) + "\n")
    for v in model.weights:
        fh.write(_fmt(v) + "\n")


def read_model(fh: TextIO) -> tuple[ModelWeights, Optional[MinMaxSeriesScaler]]:
    header = dict(part.split("=", 1) for part in fh.readline().split())
    arch = Architecture(int(header.pop("window")), int(header.pop("hidden")),
                        int(header.pop("horizon")), header.pop("cell"))
    n = int(header.pop("n"))
    weights = np.array([float(line) for line in fh if line.strip()])
    if len(weights) != n:
        raise ArchitectureMismatch(f"header says {n} weights, file has {len(weights)}")
    scaler = None
    if "scale_min" in header:
        scaler = MinMaxSeriesScaler(float(header.pop("scale_min")), float(header.pop("scale_max")))
    hyper = {}
    for k, v in header.items():
        hyper[k] = int(v) if k in ("epochs", "seed") else float(v)
    return ModelWeights(arch, weights, hyper), scaler


def save_model(path: Union[str, Path], model: ModelWeights,
               scaler: Optional[MinMaxSeriesScaler] = None) -> None:
    with open(path, "w") as fh:
        write_model(fh, model, scaler)


def load_model(path: Union[str, Path]) -> tuple[ModelWeights, Optional[MinMaxSeriesScaler]]:
    with open(path) as fh:
        return read_model(fh)


class RecurrentForecaster(RegressorMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` on a 1-D kWh series, ``predict`` next values for windows."""

    def __init__(self, window: int = 30, hidden: int = 16, learning_rate: float = 0.2,
                 epochs: int = 100, seed: int = 0, clip_norm: Optional[float] = None,
                 warm_start: bool = False):
        self.window = window
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.seed = seed
        self.clip_norm = clip_norm
        self.warm_start = warm_start

    def _config(self) -> TrainingConfig:
        return TrainingConfig(self.window, self.hidden, self.learning_rate, self.epochs,
                              self.seed, self.clip_norm)

    def fit(self, series, y=None):
        initial = self.model_ if self.warm_start and hasattr(self, "model_") else None
        scaler = self.scaler_ if self.warm_start and hasattr(self, "scaler_") else None
        self.model_, self.loss_history_, self.scaler_ = train_forecaster_local(
            series, self._config(), initial=initial, scaler=scaler)
        return self

    def predict(self, X) -> np.ndarray:
        """Next value (kWh) after each row of raw kWh windows."""
        check_is_fitted(self, "model_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.window:
            raise ContextTooShort(f"windows must have {self.window} values")
        return self.scaler_.inverse_transform(predict_next(self.model_, self.scaler_.transform(X)))

    def forecast(self, context, horizon: int = 30):
        check_is_fitted(self, "model_")
        return forecast(self.model_, context, horizon, self.scaler_)
