"""Reference predictors used to contextualize evaluation results: a
repeat-last naive forecaster and an ordinary least-squares linear map from
the look-back window to the horizon."""

from __future__ import annotations

import numpy as np

from .errors import DataError

__all__ = ["naive_forecast", "LinearBaseline"]


def naive_forecast(windows: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat the last observed value across the horizon."""
    x = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    return np.repeat(x[:, -1:], horizon, axis=1)


class LinearBaseline:
    """Least-squares affine map window -> horizon, fit on training windows."""

    def __init__(self):
        self.coef = None  # (lookback + 1, horizon), last row is the intercept

    def fit(self, windows: np.ndarray, targets: np.ndarray) -> "LinearBaseline":
        x = np.atleast_2d(np.asarray(windows, dtype=np.float64))
        y = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        if x.shape[0] != y.shape[0]:
            raise DataError("windows/targets row mismatch")
        design = np.hstack([x, np.ones((x.shape[0], 1))])
        self.coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        return self

    def predict(self, windows: np.ndarray) -> np.ndarray:
        if self.coef is None:
            raise DataError("linear baseline is not fitted")
        x = np.atleast_2d(np.asarray(windows, dtype=np.float64))
        design = np.hstack([x, np.ones((x.shape[0], 1))])
        return design @ self.coef
