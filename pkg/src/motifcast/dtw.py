"""Sequence-similarity primitives: dynamic time warping distance, a
Gaussian-kernel similarity on z-normalized sequences, and Pearson correlation.

The DTW recurrence uses per-cell absolute difference with steps
(i-1,j), (i,j-1), (i-1,j-1); an optional Sakoe-Chiba band |i-j| <= radius
speeds up long comparisons. All functions are pure and reentrant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigError, DataError

__all__ = [
    "SimilarityConfig",
    "dtw_distance",
    "dtw_similarity",
    "pearson",
    "znormalize",
    "median_pairwise_distance",
    "mean_pairwise_dtw",
]


@dataclass(frozen=True)
class SimilarityConfig:
    """Kernel scale and band for normalized DTW similarity.

    sigma: Gaussian kernel scale (> 0).
    band_radius: Sakoe-Chiba radius; None disables banding. Comparisons of
        unequal-length sequences widen the band to keep a path feasible.
    znormalize: compare shapes (z-normalized copies) rather than raw values.
    length_normalize: divide the distance by the mean sequence length before
        the kernel, making similarities comparable across scales (used by the
        cross-scale pipeline; off by default).
    """

    sigma: float
    band_radius: int | None = None
    znormalize: bool = True
    length_normalize: bool = False

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if self.band_radius is not None and self.band_radius < 0:
            raise ConfigError("band_radius must be non-negative")


@njit(cache=True, nogil=True)
def _dtw_kernel(a, b, radius):  # pragma: no cover - exercised via dtw_distance
    n = a.shape[0]
    m = b.shape[0]
    big = np.inf
    prev = np.empty(m, np.float64)
    cur = np.empty(m, np.float64)
    hi0 = m - 1 if radius < 0 else min(m - 1, radius)
    for j in range(m):
        prev[j] = big
    acc = 0.0
    for j in range(hi0 + 1):
        acc += abs(a[0] - b[j])
        prev[j] = acc
    for i in range(1, n):
        if radius < 0:
            lo, hi = 0, m - 1
        else:
            lo = i - radius
            if lo < 0:
                lo = 0
            hi = i + radius
            if hi > m - 1:
                hi = m - 1
        for j in range(m):
            cur[j] = big
        for j in range(lo, hi + 1):
            best = prev[j]
            if j > 0:
                if cur[j - 1] < best:
                    best = cur[j - 1]
                if prev[j - 1] < best:
                    best = prev[j - 1]
            cur[j] = abs(a[i] - b[j]) + best
        tmp = prev
        prev = cur
        cur = tmp
    return prev[m - 1]


@njit(cache=True, nogil=True)
def _mean_pairwise_dtw(rows):  # pragma: no cover - exercised via mean_pairwise_dtw
    n = rows.shape[0]
    means = np.zeros(n, np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            d = _dtw_kernel(rows[i], rows[j], -1)
            means[i] += d
            means[j] += d
    return means / n


def mean_pairwise_dtw(rows: np.ndarray) -> np.ndarray:
    """Mean exact DTW distance of each row to all rows (self distance is 0,
    included in the mean). Used for medoid selection inside clusters."""
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise DataError("mean_pairwise_dtw expects a non-empty 2-D matrix")
    return _mean_pairwise_dtw(rows)


def dtw_distance(a, b, band_radius: int | None = None) -> float:
    """Minimum cumulative |a_i - b_j| cost over monotone warping paths.

    With a band, the radius must be at least |len(a) - len(b)| so a path
    from corner to corner exists.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise DataError("dtw_distance expects 1-D sequences")
    if a.size == 0 or b.size == 0:
        raise DataError("dtw_distance requires non-empty sequences")
    if band_radius is None:
        radius = -1
    else:
        if band_radius < abs(a.size - b.size):
            raise ConfigError(
                f"band radius {band_radius} infeasible for lengths "
                f"{a.size} and {b.size}"
            )
        radius = int(band_radius)
    return float(_dtw_kernel(a, b, radius))


def znormalize(x: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance copy (population std). A zero-variance input
    maps to the zero vector rather than erroring; callers may warn."""
    x = np.asarray(x, dtype=np.float64)
    std = x.std()
    if std <= 0.0:
        return np.zeros_like(x)
    return (x - x.mean()) / std


def effective_radius(config: SimilarityConfig, la: int, lb: int) -> int | None:
    """Band radius widened so unequal lengths stay feasible."""
    if config.band_radius is None:
        return None
    return max(config.band_radius, abs(la - lb))


def dtw_similarity(a, b, config: SimilarityConfig) -> float:
    """Gaussian-kernel similarity exp(-d^2 / sigma^2) in (0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if config.znormalize:
        a = znormalize(a)
        b = znormalize(b)
    d = dtw_distance(a, b, effective_radius(config, a.size, b.size))
    if config.length_normalize:
        d = d / (0.5 * (a.size + b.size))
    return float(np.exp(-((d / config.sigma) ** 2)))


def pearson(a, b) -> float:
    """Sample correlation; errors on constant input or length < 2."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError("pearson expects equal-length 1-D vectors")
    if a.size < 2:
        raise DataError("pearson requires length >= 2")
    da = a - a.mean()
    db = b - b.mean()
    na = np.sqrt(np.dot(da, da))
    nb = np.sqrt(np.dot(db, db))
    if na == 0.0 or nb == 0.0:
        raise DataError("pearson undefined for constant input")
    r = float(np.dot(da, db) / (na * nb))
    return min(1.0, max(-1.0, r))


def median_pairwise_distance(
    sequences: list[np.ndarray],
    band_radius: int | None = None,
    znorm: bool = True,
    length_normalize: bool = False,
) -> float:
    """Median of the strictly positive pairwise DTW distances, used as the
    Gaussian kernel scale (median heuristic). Falls back to 1.0 when no
    positive distance exists so the kernel scale stays valid."""
    seqs = [
        znormalize(s) if znorm else np.asarray(s, dtype=np.float64)
        for s in sequences
    ]
    dists = []
    for i in range(len(seqs)):
        for j in range(i + 1, len(seqs)):
            r = None
            if band_radius is not None:
                r = max(band_radius, abs(seqs[i].size - seqs[j].size))
            d = dtw_distance(seqs[i], seqs[j], r)
            if length_normalize:
                d = d / (0.5 * (seqs[i].size + seqs[j].size))
            dists.append(d)
    positive = [d for d in dists if d > 0.0]
    if not positive:
        return 1.0
    return float(np.median(positive))
