"""Error metrics."""

import numpy as np

from ..core import SliceError


class LengthMismatch(SliceError):
    pass


def mse(predicted, actual) -> float:
    p = np.asarray(predicted, dtype=float).ravel()
    a = np.asarray(actual, dtype=float).ravel()
    if len(p) != len(a) or len(p) == 0:
        raise LengthMismatch(f"lengths {len(p)} and {len(a)} must match and be >= 1")
    return float(np.mean((p - a) ** 2))
