"""Planted-motif fixtures for tests and benchmarks.

The two-regime series alternates events built from two fixed template
waveforms (periods 24 and 36) separated by calm gaps, with additive Gaussian
noise. Because the event/gap switching structure has far more spectral
content than a look-back window can capture linearly, the fixture separates
a pattern-aware forecaster from a plain least-squares map, while the tiled
templates keep the spectral peaks that extraction needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .dtw import znormalize
from .series import MultivariateSeries

__all__ = ["TwoRegimeFixture", "two_regime_series", "write_fixture_csv"]

SHORT_PERIOD = 24
LONG_PERIOD = 36
SHORT_REPS = 6  # event length 144
LONG_REPS = 8  # event length 288; longer so the long period keeps spectral
GAP = 36  # weight despite the detrender damping slower cycles
# Cycle of 504 is divisible by the per-scale enumeration strides, so tile
# phases fall on the same grid offsets in every event.
CYCLE = SHORT_PERIOD * SHORT_REPS + GAP + LONG_PERIOD * LONG_REPS + GAP  # 504
GAP_AMPLITUDE = 0.22


def _template_short() -> np.ndarray:
    """Asymmetric quasi-sinusoid of length 24, z-normalized.

    The weak second harmonic keeps the series spectrum fundamental-dominant
    (no fragment scales enter the period ranking) while giving the shape
    enough asymmetry to stay warp-distinct from the long template."""
    i = np.arange(SHORT_PERIOD, dtype=np.float64)
    phase = 2.0 * np.pi * i / SHORT_PERIOD
    x = np.sin(phase) + 0.2477 * np.sin(2.0 * phase + 1.0695)
    return znormalize(x)


def _template_long() -> np.ndarray:
    """Skewed quasi-sinusoid of length 36 with weak upper harmonics,
    z-normalized; warp-distinct from the short template."""
    i = np.arange(LONG_PERIOD, dtype=np.float64)
    phase = 2.0 * np.pi * i / LONG_PERIOD
    x = (
        np.sin(phase + 1.0437)
        + 0.2118 * np.sin(2.0 * phase + 4.5373)
        + 0.1044 * np.sin(3.0 * phase + 1.0206)
    )
    return znormalize(x)


@dataclass(frozen=True)
class TwoRegimeFixture:
    series: MultivariateSeries
    clean: np.ndarray
    template_short: np.ndarray
    template_long: np.ndarray
    short_occurrences: list[tuple[int, int]]
    long_occurrences: list[tuple[int, int]]
    noise_std: float
    seed: int

    @property
    def values(self) -> np.ndarray:
        return self.series.channel(0)


def two_regime_series(
    length: int = 5000, noise: float = 0.05, seed: int = 0
) -> TwoRegimeFixture:
    """Build the alternating two-regime fixture.

    Layout per 504-step cycle: 8 tiles of the period-24 template, a 48-step
    calm gap, 6 tiles of the period-36 template, another gap. Noise is
    N(0, noise^2) on every step (templates have unit variance).
    """
    short = _template_short()
    long_ = _template_long()
    clean = np.zeros(length, dtype=np.float64)
    short_occ: list[tuple[int, int]] = []
    long_occ: list[tuple[int, int]] = []

    def fill_gap(start: int, index: int) -> None:
        # low-amplitude wave with a per-gap phase so boundary-straddling
        # windows differ across events instead of forming tight junk clusters
        stop = min(start + GAP, length)
        i = np.arange(stop - start, dtype=np.float64)
        clean[start:stop] = GAP_AMPLITUDE * np.sin(
            2.0 * np.pi * i / GAP + 2.39996 * index
        )

    pos = 0
    gap_index = 0
    while pos < length:
        cycle_start = pos
        for rep in range(SHORT_REPS):
            start = cycle_start + rep * SHORT_PERIOD
            if start + SHORT_PERIOD > length:
                break
            clean[start : start + SHORT_PERIOD] = short
            short_occ.append((start, SHORT_PERIOD))
        pos = cycle_start + SHORT_REPS * SHORT_PERIOD
        fill_gap(pos, gap_index)
        gap_index += 1
        pos += GAP
        for rep in range(LONG_REPS):
            start = pos + rep * LONG_PERIOD
            if start + LONG_PERIOD > length:
                break
            clean[start : start + LONG_PERIOD] = long_
            long_occ.append((start, LONG_PERIOD))
        pos = pos + LONG_REPS * LONG_PERIOD
        fill_gap(pos, gap_index)
        gap_index += 1
        pos += GAP

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 911))))
    values = clean + rng.normal(0.0, noise, size=length)
    series = MultivariateSeries(values[:, None], ("signal",), step_seconds=3600)
    return TwoRegimeFixture(
        series=series,
        clean=clean,
        template_short=short,
        template_long=long_,
        short_occurrences=short_occ,
        long_occurrences=long_occ,
        noise_std=noise,
        seed=seed,
    )


def write_fixture_csv(fixture: TwoRegimeFixture, path) -> None:
    """Hourly-stamped CSV matching the loader's contract."""
    start = datetime(2020, 1, 1)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("date,signal\n")
        for i, v in enumerate(fixture.values):
            stamp = start + timedelta(hours=i)
            fh.write(f"{stamp.isoformat(sep=' ')},{v!r}\n")
