"""Time-series data model: CSV ingestion, chronological splitting, normalization,
detrending, downsampling, windowing, and the MSE/MAE evaluation metrics.

All values are float64. Series objects are immutable after construction and
safe to share across threads.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "MultivariateSeries",
    "SplitSpec",
    "NormStats",
    "WindowSample",
    "load_csv",
    "split_chronological",
    "split_published_protocol",
    "standardize",
    "destandardize",
    "moving_average_detrend",
    "downsample",
    "sliding_windows",
    "window_matrix",
    "window_count",
    "mse",
    "mae",
]


@dataclass(frozen=True)
class MultivariateSeries:
    """A T x N block of chronologically ordered observations.

    values are unitless after standardization; step_seconds records the
    sampling interval (1 when unknown).
    """

    values: np.ndarray
    channel_names: tuple[str, ...]
    step_seconds: int = 1

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"series values must be 2-D, got shape {values.shape}")
        t, n = values.shape
        if t < 1 or n < 1:
            raise DataError(f"series must have T >= 1 and N >= 1, got {values.shape}")
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise DataError(f"non-finite value at row {bad[0]}, channel {bad[1]}")
        if len(self.channel_names) != n:
            raise DataError(
                f"expected {n} channel names, got {len(self.channel_names)}"
            )
        if len(set(self.channel_names)) != n:
            raise DataError("channel names must be distinct")
        if self.step_seconds < 1:
            raise DataError("step_seconds must be a positive integer")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def channel(self, index: int) -> np.ndarray:
        """Read-only 1-D view of one channel."""
        return self.values[:, index]

    def slice_rows(self, start: int, stop: int) -> "MultivariateSeries":
        return MultivariateSeries(
            self.values[start:stop].copy(), self.channel_names, self.step_seconds
        )


@dataclass(frozen=True)
class SplitSpec:
    """Contiguous chronological train/val/test fractions summing to 1."""

    train_frac: float
    val_frac: float
    test_frac: float

    def __post_init__(self):
        for name, f in (
            ("train_frac", self.train_frac),
            ("val_frac", self.val_frac),
            ("test_frac", self.test_frac),
        ):
            if not (0.0 < f < 1.0):
                raise ConfigError(f"{name} must lie in (0, 1), got {f}")
        total = self.train_frac + self.val_frac + self.test_frac
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {total}")


@dataclass(frozen=True)
class NormStats:
    """Per-channel mean/std captured from the stats source, kept for the
    inverse transform. Serializes to a JSON sidecar."""

    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class WindowSample:
    """One (look-back window, target horizon) pair cut from a single channel.

    t_end is the absolute index of the last window element in the source
    series. annotation is filled by the forecaster when a motif library is
    available: (motif index, life-cycle position in [0, 1], match score,
    fallback flag).
    """

    window: np.ndarray
    target: np.ndarray
    channel: int
    t_end: int
    annotation: tuple | None = None

    def __post_init__(self):
        if self.window.ndim != 1 or self.window.size < 1:
            raise DataError("window must be a non-empty 1-D vector")
        if self.target.ndim != 1 or self.target.size < 1:
            raise DataError("target must be a non-empty 1-D vector")
        if self.t_end < self.window.size - 1:
            raise DataError("t_end inconsistent with window length")


def load_csv(path, date_column: str = "date") -> MultivariateSeries:
    """Load a comma-separated file whose first column is a timestamp.

    Every non-date column must parse as a finite real; rows must be strictly
    chronologically ordered (ISO-style timestamps compare lexicographically).
    The date column is dropped; row count and column order are preserved.
    """
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise ConfigError(f"data file not found: {path}")
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if date_column not in header:
            raise DataError(f"{path}: no column named {date_column!r} in header")
        date_idx = header.index(date_column)
        names = tuple(h for i, h in enumerate(header) if i != date_idx)
        if not names:
            raise DataError(f"{path}: no numeric columns besides {date_column!r}")

        rows = []
        stamps = []
        prev_stamp = None
        for row_no, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}"
                )
            stamp = row[date_idx].strip()
            if prev_stamp is not None:
                if stamp == prev_stamp:
                    raise DataError(f"{path}: duplicate timestamp at row {row_no}")
                if stamp < prev_stamp:
                    raise DataError(f"{path}: non-monotone timestamp at row {row_no}")
            prev_stamp = stamp
            stamps.append(stamp)
            parsed = []
            for col_idx, cell in enumerate(row):
                if col_idx == date_idx:
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric cell {cell!r} at row {row_no}, "
                        f"column {header[col_idx]!r}"
                    )
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: non-finite value at row {row_no}, "
                        f"column {header[col_idx]!r}"
                    )
                parsed.append(v)
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    values = np.array(rows, dtype=np.float64)
    return MultivariateSeries(values, names, _infer_step_seconds(stamps))


def _infer_step_seconds(stamps: list[str]) -> int:
    if len(stamps) < 2:
        return 1
    try:
        a = datetime.fromisoformat(stamps[0])
        b = datetime.fromisoformat(stamps[1])
    except ValueError:
        return 1
    delta = int((b - a).total_seconds())
    return delta if delta >= 1 else 1


def split_chronological(
    series: MultivariateSeries, spec: SplitSpec
) -> tuple[MultivariateSeries, MultivariateSeries, MultivariateSeries]:
    """Cut three contiguous chronological slices.

    Train and val lengths are floor(T * frac); the remainder goes to test,
    so concatenating the parts reconstructs the input exactly.
    """
    t = series.length
    n_train = int(math.floor(t * spec.train_frac))
    n_val = int(math.floor(t * spec.val_frac))
    n_test = t - n_train - n_val
    if n_train < 1 or n_val < 1 or n_test < 1:
        raise DataError(
            f"split of T={t} with fractions "
            f"({spec.train_frac}, {spec.val_frac}, {spec.test_frac}) "
            f"leaves an empty part: ({n_train}, {n_val}, {n_test})"
        )
    return (
        series.slice_rows(0, n_train),
        series.slice_rows(n_train, n_train + n_val),
        series.slice_rows(n_train + n_val, t),
    )


def split_published_protocol(
    series: MultivariateSeries, lookback: int
) -> tuple[MultivariateSeries, MultivariateSeries, MultivariateSeries]:
    """Slicing convention used by the published electricity-transformer
    benchmarks: 12/4/4 periods of 30 days, with val and test slices extended
    backwards by the look-back so every evaluation point has full context.

    Yields the published window counts, e.g. (8545, 2881, 2881) for the
    hourly transformer files at lookback 96.
    """
    steps_per_month = 30 * 24 * 3600 // series.step_seconds
    if steps_per_month < 1:
        raise ConfigError("step_seconds too large for the published protocol")
    b1 = 12 * steps_per_month
    b2 = b1 + 4 * steps_per_month
    b3 = b2 + 4 * steps_per_month
    if series.length < b3:
        raise DataError(
            f"published protocol needs T >= {b3}, series has {series.length}"
        )
    if lookback >= b1:
        raise ConfigError("lookback must be shorter than the train slice")
    return (
        series.slice_rows(0, b1),
        series.slice_rows(b1 - lookback, b2),
        series.slice_rows(b2 - lookback, b3),
    )


def standardize(
    series: MultivariateSeries, stats_source: MultivariateSeries
) -> tuple[MultivariateSeries, NormStats]:
    """Shift/scale each channel by the stats source's population mean/std.

    Stats conventionally come from the train split so val/test stay leak-free.
    """
    if stats_source.n_channels != series.n_channels:
        raise DataError("stats source channel count mismatch")
    mean = stats_source.values.mean(axis=0)
    std = stats_source.values.std(axis=0)  # population (1/N) variance
    zero = np.nonzero(std <= 0.0)[0]
    if zero.size:
        raise DataError(
            f"zero-variance channel(s) in stats source: "
            f"{[stats_source.channel_names[i] for i in zero]}"
        )
    out = (series.values - mean) / std
    return (
        MultivariateSeries(out, series.channel_names, series.step_seconds),
        NormStats(mean=mean, std=std),
    )


def destandardize(series: MultivariateSeries, stats: NormStats) -> MultivariateSeries:
    out = series.values * stats.std + stats.mean
    return MultivariateSeries(out, series.channel_names, series.step_seconds)


def moving_average_detrend(
    series: MultivariateSeries, window: int = 25
) -> MultivariateSeries:
    """Subtract a centered moving average (edge rows replicated for padding).

    Output has the same shape as the input. The default window of 25 follows
    the common series-decomposition convention; it must be odd.
    """
    t = series.length
    if window % 2 == 0:
        raise ConfigError(f"moving-average window must be odd, got {window}")
    if window < 1 or window > t:
        raise ConfigError(f"moving-average window {window} exceeds series length {t}")
    half = window // 2
    padded = np.pad(series.values, ((half, half), (0, 0)), mode="edge")
    csum = np.cumsum(padded, axis=0, dtype=np.float64)
    csum = np.vstack([np.zeros((1, series.n_channels)), csum])
    trend = (csum[window:] - csum[:-window]) / window
    return MultivariateSeries(
        series.values - trend, series.channel_names, series.step_seconds
    )


def downsample(series: MultivariateSeries, factor: int) -> MultivariateSeries:
    """Block-mean the rows; T' = floor(T / factor), trailing remainder dropped."""
    if factor < 1:
        raise ConfigError(f"downsample factor must be >= 1, got {factor}")
    if factor == 1:
        return series
    t = series.length
    t_out = t // factor
    if t_out < 1:
        raise DataError(f"downsample factor {factor} exceeds series length {t}")
    blocks = series.values[: t_out * factor].reshape(t_out, factor, series.n_channels)
    return MultivariateSeries(
        blocks.mean(axis=1),
        series.channel_names,
        series.step_seconds * factor,
    )


def window_count(t: int, lookback: int, horizon: int, stride: int = 1) -> int:
    if t < lookback + horizon:
        return 0
    return (t - lookback - horizon) // stride + 1


def window_matrix(
    channel: np.ndarray, lookback: int, horizon: int, stride: int = 1
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack all (window, target) pairs of one channel as matrices.

    Returns (X of shape n x lookback, Y of shape n x horizon, t_end indices).
    """
    t = channel.shape[0]
    n = window_count(t, lookback, horizon, stride)
    if n < 1:
        raise DataError(
            f"series length {t} too short for lookback {lookback} + horizon {horizon}"
        )
    x = np.empty((n, lookback), dtype=np.float64)
    y = np.empty((n, horizon), dtype=np.float64)
    t_ends = np.empty(n, dtype=np.int64)
    for i in range(n):
        start = i * stride
        x[i] = channel[start : start + lookback]
        y[i] = channel[start + lookback : start + lookback + horizon]
        t_ends[i] = start + lookback - 1
    return x, y, t_ends


def sliding_windows(
    series: MultivariateSeries, lookback: int, horizon: int, stride: int = 1
) -> list[list[WindowSample]]:
    """Enumerate WindowSamples per channel at t_end = lookback-1, +stride, ..."""
    if lookback < 1 or horizon < 1 or stride < 1:
        raise ConfigError("lookback, horizon and stride must be >= 1")
    out = []
    for c in range(series.n_channels):
        x, y, t_ends = window_matrix(series.channel(c), lookback, horizon, stride)
        out.append(
            [
                WindowSample(window=x[i].copy(), target=y[i].copy(), channel=c,
                             t_end=int(t_ends[i]))
                for i in range(x.shape[0])
            ]
        )
    return out


def _check_pair(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DataError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    if pred.size < 1:
        raise DataError("empty prediction")
    return pred, truth


def mse(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean squared error; multichannel inputs average over all entries."""
    pred, truth = _check_pair(pred, truth)
    return float(np.mean((pred - truth) ** 2))


def mae(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean absolute error; multichannel inputs average over all entries."""
    pred, truth = _check_pair(pred, truth)
    return float(np.mean(np.abs(pred - truth)))
