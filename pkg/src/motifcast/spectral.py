"""Frequency analysis: amplitude spectra, dominant-period detection, and
k-dominant-frequency-hash channel grouping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .series import MultivariateSeries, moving_average_detrend

__all__ = [
    "AmplitudeSpectrum",
    "PeriodSet",
    "amplitude_spectrum",
    "dominant_periods",
    "kdfh_group",
]


@dataclass(frozen=True)
class AmplitudeSpectrum:
    """Moduli of the DFT coefficients at integer frequency bins 0..floor(T/2)."""

    amplitudes: np.ndarray
    series_length: int

    def __post_init__(self):
        if self.amplitudes.shape != (self.series_length // 2 + 1,):
            raise DataError("spectrum length must be floor(T/2)+1")


@dataclass(frozen=True)
class PeriodSet:
    """Distinct integer periods in descending spectral-amplitude order."""

    periods: tuple[int, ...]
    amplitudes: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"periods": list(self.periods), "amplitudes": list(self.amplitudes)}


def amplitude_spectrum(channel: np.ndarray) -> AmplitudeSpectrum:
    """Amplitude spectrum |DFT(x)| over the non-negative frequency bins."""
    x = np.asarray(channel, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("amplitude_spectrum expects a 1-D channel")
    t = x.shape[0]
    if t < 4:
        raise DataError(f"need T >= 4 for a spectrum, got {t}")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite values in channel")
    amps = np.abs(np.fft.rfft(x))
    return AmplitudeSpectrum(amplitudes=amps, series_length=t)


def dominant_periods(spectrum: AmplitudeSpectrum, n_periods: int) -> PeriodSet:
    """Top periods by spectral magnitude.

    Frequencies f >= 1 are ranked by amplitude (ties break toward the lower
    frequency, i.e. the longer period), mapped to periods ceil(T/f), clamped
    to [2, T//2], and deduplicated keeping the higher-amplitude entry.
    """
    if n_periods < 1:
        raise ConfigError("n_periods must be >= 1")
    t = spectrum.series_length
    amps = spectrum.amplitudes
    n_bins = amps.shape[0]
    if n_bins < 2 or not np.any(amps[1:] > 0.0):
        raise DataError("no frequency bin with positive amplitude")
    freqs = np.arange(1, n_bins)
    order = np.lexsort((freqs, -amps[1:]))  # amplitude desc, then frequency asc
    periods: list[int] = []
    kept_amps: list[float] = []
    seen: set[int] = set()
    cap = max(2, t // 2)
    for idx in order:
        f = int(freqs[idx])
        a = float(amps[f])
        if a <= 0.0:
            break
        period = -(-t // f)  # ceil(T / f)
        period = min(max(period, 2), cap)
        if period in seen:
            continue
        seen.add(period)
        periods.append(period)
        kept_amps.append(a)
        if len(periods) == n_periods:
            break
    return PeriodSet(periods=tuple(periods), amplitudes=tuple(kept_amps))


def kdfh_group(
    series: MultivariateSeries, k: int, detrend_window: int = 25
) -> list[list[int]]:
    """Group channels by the sorted set of their top-k dominant frequency bins.

    Channels with identical hashes share a group; groups partition the channel
    indices and are ordered by their smallest member.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    window = min(detrend_window, series.length)
    if window % 2 == 0:
        window -= 1
    detrended = moving_average_detrend(series, max(window, 1))
    groups: dict[tuple[int, ...], list[int]] = {}
    for c in range(series.n_channels):
        amps = amplitude_spectrum(detrended.channel(c)).amplitudes
        freqs = np.arange(1, amps.shape[0])
        order = np.lexsort((freqs, -amps[1:]))
        top = tuple(sorted(int(freqs[i]) for i in order[:k]))
        groups.setdefault(top, []).append(c)
    return sorted(groups.values(), key=lambda g: g[0])
