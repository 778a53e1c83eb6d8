import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_brain_rate, naive_dft_amplitudes

from neurorate.errors import DegenerateChannelError, ValidationError
from neurorate.spectral import (
    Band,
    BandScheme,
    band_centroids,
    band_profile,
    band_ratios,
    brain_rate,
    power_spectrum,
    window_brain_rate,
)
from neurorate.windowing import Window


def make_window(samples):
    return Window(start_index=0, samples=np.atleast_2d(np.asarray(samples, float)), trial_id="t")


def flat_spectrum_signal(amplitude=1.0, n=256, rate=128.0, channels=1, seed=0):
    """Equal-amplitude cosine at every in-band bin: a synthetic flat spectrum."""
    rng = np.random.default_rng(seed)
    t = np.arange(n) / rate
    freqs = np.fft.rfftfreq(n, 1 / rate)
    rows = np.zeros((channels, n))
    for ci in range(channels):
        for f in freqs:
            if 0.5 <= f < 45.0:
                rows[ci] += amplitude * np.cos(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    return rows


class TestBandScheme:
    def test_canonical_mean_frequencies(self):
        scheme = BandScheme()
        assert scheme.names == ("delta", "theta", "alpha", "beta", "gamma")
        assert np.array_equal(scheme.mean_frequencies, [2.25, 6.0, 10.0, 21.0, 37.5])

    def test_overlapping_bands_rejected(self):
        with pytest.raises(ValidationError, match="overlap"):
            BandScheme((Band("a", 1.0, 5.0), Band("b", 4.0, 8.0)))

    def test_half_open_boundary_partition(self):
        # the 4 Hz bin belongs to theta only
        scheme = BandScheme()
        masks = scheme.bin_masks(np.array([0.0, 3.5, 4.0, 4.5]))
        assert not masks[0][2] and masks[1][2]
        assert not masks[:, 0].any()  # DC never in a band


class TestPowerSpectrum:
    def test_bin_layout(self):
        spec = power_spectrum(make_window(np.random.default_rng(0).normal(size=256)), 128.0)
        assert len(spec.freqs) == 129  # N/2 + 1
        assert spec.bin_spacing == 0.5

    def test_bin_aligned_sinusoid_concentrates(self):
        t = np.arange(256) / 128.0
        spec = power_spectrum(make_window(np.sin(2 * np.pi * 10.0 * t)), 128.0)
        amps = spec.amplitudes[0]
        at_10 = amps[spec.freqs == 10.0][0]
        assert abs(at_10 - 1.0) < 1e-9
        others = amps[(spec.freqs != 10.0) & (spec.freqs != 0.0)]
        assert np.all(others < 1e-9)

    @pytest.mark.parametrize("n", [8, 16, 64, 256])
    def test_matches_naive_dft_oracle(self, n, rng):
        x = rng.normal(size=(2, n))
        freqs, expected = naive_dft_amplitudes(x, 128.0)
        spec = power_spectrum(make_window(x), 128.0)
        assert np.allclose(spec.freqs, freqs, atol=1e-12)
        scale = np.abs(expected).max()
        assert np.max(np.abs(spec.amplitudes - expected)) < 1e-9 * scale

    def test_too_short_window(self):
        with pytest.raises(ValidationError):
            power_spectrum(make_window([1.0]), 128.0)

    def test_hann_taper_recovers_amplitude(self):
        # amplitude-corrected Hann reads the bin value to within its own leakage
        t = np.arange(256) / 128.0
        spec = power_spectrum(make_window(3.0 * np.sin(2 * np.pi * 10.0 * t)), 128.0, taper="hann")
        assert abs(spec.amplitudes[0][spec.freqs == 10.0][0] - 3.0) < 1e-4


class TestBandCentroids:
    def test_flat_spectrum_gives_constant(self):
        win = make_window(flat_spectrum_signal(amplitude=2.5))
        c = band_centroids(power_spectrum(win, 128.0))
        assert np.max(np.abs(c - 2.5)) < 1e-9

    def test_zero_signal_gives_zero(self):
        c = band_centroids(power_spectrum(make_window(np.zeros(256)), 128.0))
        assert np.array_equal(c, np.zeros_like(c))

    def test_alpha_sinusoid_distributes_over_band_bins(self):
        # [8, 12) at 0.5 Hz spacing contains 8 bins, so C[alpha] = amp / 8
        t = np.arange(256) / 128.0
        c = band_centroids(power_spectrum(make_window(4.0 * np.sin(2 * np.pi * 10.0 * t)), 128.0))
        assert abs(c[2, 0] - 4.0 / 8) < 1e-9
        assert np.max(np.abs(c[[0, 1, 3, 4], 0])) < 1e-9

    def test_empty_band_is_config_error(self):
        spec = power_spectrum(make_window(np.random.default_rng(0).normal(size=8)), 128.0)
        with pytest.raises(ValidationError, match="no frequency bins"):
            band_centroids(spec)  # 16 Hz spacing leaves delta empty


class TestBandRatios:
    def test_flat_spectrum_ratios_are_one(self):
        spec = power_spectrum(make_window(flat_spectrum_signal()), 128.0)
        p = band_ratios(band_centroids(spec), spec)
        assert np.max(np.abs(p - 1.0)) < 1e-9

    def test_flat_spectrum_weighted_sum(self):
        spec = power_spectrum(make_window(flat_spectrum_signal()), 128.0)
        p = band_ratios(band_centroids(spec), spec)
        weighted = BandScheme().mean_frequencies @ p
        assert abs(weighted[0] - 76.75) < 1e-9  # 2.25 + 6 + 10 + 21 + 37.5

    def test_zero_channel_is_degenerate(self):
        x = np.vstack([flat_spectrum_signal()[0], np.zeros(256)])
        spec = power_spectrum(make_window(x), 128.0)
        with pytest.raises(DegenerateChannelError):
            band_ratios(band_centroids(spec), spec)

    def test_two_sinusoid_mixture_matches_oracle(self, rng):
        t = np.arange(256) / 128.0
        x = 2.0 * np.sin(2 * np.pi * 6.0 * t) + 0.7 * np.sin(2 * np.pi * 21.5 * t + 0.4)
        spec = power_spectrum(make_window(x), 128.0)
        p = band_ratios(band_centroids(spec), spec)
        freqs, amps = naive_dft_amplitudes(np.atleast_2d(x), 128.0)
        for b, band in enumerate(BandScheme().bands):
            sel = (freqs >= band.low_hz) & (freqs < band.high_hz) & (freqs > 0)
            union = (freqs >= 0.5) & (freqs < 45.0) & (freqs > 0)
            expected = amps[0][sel].mean() / amps[0][union].mean()
            assert abs(p[b, 0] - expected) < 1e-9


class TestBrainRate:
    def test_flat_spectrum_32_channels(self):
        spec = power_spectrum(make_window(flat_spectrum_signal(channels=32)), 128.0)
        p = band_ratios(band_centroids(spec), spec)
        assert abs(brain_rate(p, mode="sum").value - 2456.0) < 1e-6  # 32 x 76.75
        assert abs(brain_rate(p, mode="mean").value - 76.75) < 1e-9

    def test_mode_recorded(self):
        spec = power_spectrum(make_window(flat_spectrum_signal()), 128.0)
        p = band_ratios(band_centroids(spec), spec)
        assert brain_rate(p, mode="sum").mode == "sum"
        assert brain_rate(p, mode="mean").mode == "mean"

    def test_band_mixture_matches_end_to_end_oracle(self, rng):
        for _ in range(5):
            x = rng.normal(size=(3, 128)) + flat_spectrum_signal(channels=3, n=128, seed=int(rng.integers(1e6)))
            win = make_window(x)
            got = window_brain_rate(win, 128.0, mode="mean").value
            want = brute_force_brain_rate(x, 128.0, [(b.low_hz, b.high_hz) for b in BandScheme().bands], "mean")
            assert abs(got - want) < 1e-9 * max(1.0, abs(want))

    def test_mean_is_average_of_nonnegative_channel_terms(self, rng):
        x = rng.normal(size=(4, 256)) + flat_spectrum_signal(channels=4, seed=7)
        spec = power_spectrum(make_window(x), 128.0)
        p = band_ratios(band_centroids(spec), spec)
        per_channel = BandScheme().mean_frequencies @ p
        assert np.all(per_channel >= 0)
        assert abs(brain_rate(p, mode="mean").value - per_channel.mean()) < 1e-12


class TestScaleCovariance:
    @settings(max_examples=25, deadline=None)
    @given(scale=st.floats(1e-3, 1e3), seed=st.integers(0, 2**16))
    def test_ratios_and_rate_scale_invariant(self, scale, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, 128)) + 1.5 * flat_spectrum_signal(channels=2, n=128, seed=seed)
        base = band_profile(power_spectrum(make_window(x), 128.0))
        scaled = band_profile(power_spectrum(make_window(scale * x), 128.0))
        assert np.max(np.abs(base.ratios - scaled.ratios)) < 1e-9
        br_a = brain_rate(base.ratios, mode="mean").value
        br_b = brain_rate(scaled.ratios, mode="mean").value
        assert abs(br_a - br_b) < 1e-9 * max(1.0, br_a)
