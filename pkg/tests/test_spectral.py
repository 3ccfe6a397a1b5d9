import numpy as np
import pytest

from motifcast.errors import ConfigError, DataError
from motifcast.series import MultivariateSeries
from motifcast.spectral import (
    AmplitudeSpectrum,
    amplitude_spectrum,
    dominant_periods,
    kdfh_group,
)


def dft_amplitudes_oracle(x):
    """Direct O(T^2) DFT, independent of any FFT library path."""
    t = len(x)
    n_bins = t // 2 + 1
    out = np.empty(n_bins)
    for f in range(n_bins):
        re = sum(x[k] * np.cos(-2 * np.pi * f * k / t) for k in range(t))
        im = sum(x[k] * np.sin(-2 * np.pi * f * k / t) for k in range(t))
        out[f] = np.hypot(re, im)
    return out


class TestAmplitudeSpectrum:
    def test_constant_series(self):
        spec = amplitude_spectrum(np.full(32, 3.0))
        assert np.all(spec.amplitudes[1:] < 1e-9)
        assert spec.amplitudes[0] == pytest.approx(32 * 3.0)

    def test_single_tone_peak(self):
        t = 240
        x = np.sin(2 * np.pi * np.arange(t) / 24.0)
        spec = amplitude_spectrum(x)
        assert int(np.argmax(spec.amplitudes[1:])) + 1 == 10

    def test_two_tone_amplitude_ratio(self):
        t = 240
        k = np.arange(t)
        x = 2.0 * np.sin(2 * np.pi * 10 * k / t) + 1.0 * np.sin(2 * np.pi * 30 * k / t)
        spec = amplitude_spectrum(x)
        oracle = dft_amplitudes_oracle(x)
        assert np.allclose(spec.amplitudes, oracle, rtol=1e-8, atol=1e-8)
        assert spec.amplitudes[10] == pytest.approx(2.0 * spec.amplitudes[30], rel=1e-6)

    def test_matches_direct_dft_on_random_series(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            t = int(rng.integers(8, 128))
            x = rng.normal(size=t)
            spec = amplitude_spectrum(x)
            oracle = dft_amplitudes_oracle(x)
            scale = max(1.0, np.abs(oracle).max())
            assert np.all(np.abs(spec.amplitudes - oracle) / scale < 1e-8)

    def test_parseval(self):
        rng = np.random.default_rng(12)
        for _ in range(5):
            t = int(rng.integers(16, 200))
            x = rng.normal(size=t)
            coeffs = np.fft.fft(x)
            lhs = float(np.sum(np.abs(coeffs) ** 2))
            rhs = t * float(np.sum(x * x))
            assert abs(lhs - rhs) / rhs < 1e-6

    def test_too_short(self):
        with pytest.raises(DataError):
            amplitude_spectrum(np.array([1.0, 2.0, 3.0]))


def spike_spectrum(t, spikes):
    """Amplitude spectrum object with chosen amplitudes at chosen bins."""
    amps = np.zeros(t // 2 + 1)
    for f, a in spikes.items():
        amps[f] = a
    return AmplitudeSpectrum(amplitudes=amps, series_length=t)


class TestDominantPeriods:
    def test_single_tone_dominant(self):
        t = 240
        x = np.sin(2 * np.pi * np.arange(t) / 24.0) + 0.01 * np.cos(
            2 * np.pi * 7 * np.arange(t) / t
        )
        ps = dominant_periods(amplitude_spectrum(x), 3)
        assert ps.periods[0] == 24
        assert len(ps.periods) <= 3

    def test_two_tones(self):
        t = 240
        k = np.arange(t)
        x = 2.0 * np.sin(2 * np.pi * 10 * k / t) + 1.0 * np.sin(2 * np.pi * 20 * k / t)
        ps = dominant_periods(amplitude_spectrum(x), 2)
        assert ps.periods == (24, 12)

    def test_ceiling_formula(self):
        ps = dominant_periods(spike_spectrum(100, {7: 1.0}), 1)
        assert ps.periods == (15,)  # ceil(100 / 7)

    def test_tie_breaks_to_lower_frequency(self):
        ps = dominant_periods(spike_spectrum(120, {5: 2.0, 8: 2.0, 3: 1.0}), 3)
        # equal amplitudes at f=5 and f=8: lower frequency (longer period) first
        assert ps.periods == (24, 15, 40)

    def test_duplicate_periods_merged(self):
        # ceil maps f=70 and f=99 of T=200 both to period 3
        ps = dominant_periods(spike_spectrum(200, {70: 2.0, 99: 1.0, 3: 1.5}), 5)
        assert ps.periods.count(3) == 1
        # the period-3 entry keeps the higher-amplitude bin (f=70)
        idx = ps.periods.index(3)
        assert ps.amplitudes[idx] == 2.0

    def test_clamped_to_half_length(self):
        ps = dominant_periods(spike_spectrum(100, {1: 1.0}), 1)
        assert ps.periods == (50,)

    def test_all_zero_rejected(self):
        with pytest.raises(DataError):
            dominant_periods(spike_spectrum(100, {}), 1)

    def test_deterministic(self):
        spec = spike_spectrum(240, {10: 1.0, 20: 0.5, 30: 0.25})
        a = dominant_periods(spec, 3)
        b = dominant_periods(spec, 3)
        assert a == b


class TestKdfh:
    @staticmethod
    def build(channels):
        values = np.column_stack(channels)
        names = tuple(f"c{i}" for i in range(values.shape[1]))
        return MultivariateSeries(values, names)

    def test_identical_channels_share_group(self):
        x = np.sin(2 * np.pi * np.arange(240) / 24.0)
        groups = kdfh_group(self.build([x, x.copy()]), 2)
        assert groups == [[0, 1]]

    def test_different_periods_split(self):
        t = np.arange(240)
        a = np.sin(2 * np.pi * t / 24.0)
        b = np.sin(2 * np.pi * t / 12.0)
        groups = kdfh_group(self.build([a, b]), 1)
        assert groups == [[0], [1]]

    def test_partition_property(self):
        rng = np.random.default_rng(21)
        channels = [rng.normal(size=300) for _ in range(7)]
        groups = kdfh_group(self.build(channels), 3)
        flat = sorted(i for g in groups for i in g)
        assert flat == list(range(7))
        assert sum(len(g) for g in groups) == 7

    def test_k_validated(self):
        with pytest.raises(ConfigError):
            kdfh_group(self.build([np.arange(50.0)]), 0)
