"""Frequency-domain features: amplitude spectra, band centroids, power ratios,
and the brain-rate index.

The spectrum is the one-sided magnitude of the DFT with a rectangular window,
scaled so that a bin-aligned sinusoid of amplitude ``a`` microvolts reads
``a`` in its bin. Band intervals are half-open ``[low, high)`` so adjacent
bands partition shared boundaries; the power-ratio denominator averages over
the union of the five bands only (0.5-45 Hz), never the DC bin.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np

from .errors import DegenerateChannelError, ValidationError
from .windowing import Window

AggregationMode = Literal["sum", "mean"]


class Band(NamedTuple):
    name: str
    low_hz: float
    high_hz: float

    @property
    def mean_hz(self) -> float:
        return (self.low_hz + self.high_hz) / 2.0


CANONICAL_BANDS = (
    Band("delta", 0.5, 4.0),
    Band("theta", 4.0, 8.0),
    Band("alpha", 8.0, 12.0),
    Band("beta", 12.0, 30.0),
    Band("gamma", 30.0, 45.0),
)


@dataclass(frozen=True)
class BandScheme:
    """Ascending, non-overlapping frequency bands with their mean frequencies."""

    bands: tuple[Band, ...] = CANONICAL_BANDS

    def __post_init__(self) -> None:
        bands = tuple(Band(*b) for b in self.bands)
        if not bands:
            raise ValidationError("a band scheme needs at least one band")
        for b in bands:
            if not 0 <= b.low_hz < b.high_hz:
                raise ValidationError(f"band {b.name!r} has invalid range [{b.low_hz}, {b.high_hz})")
        for a, b in zip(bands, bands[1:]):
            if b.low_hz < a.high_hz:
                raise ValidationError(f"bands {a.name!r} and {b.name!r} overlap or are out of order")
        object.__setattr__(self, "bands", bands)

    @property
    def n_bands(self) -> int:
        return len(self.bands)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(b.name for b in self.bands)

    @property
    def mean_frequencies(self) -> np.ndarray:
        """The band-weight vector f_b; (2.25, 6, 10, 21, 37.5) for the canonical bands."""
        return np.array([b.mean_hz for b in self.bands])

    def bin_masks(self, freqs: np.ndarray) -> np.ndarray:
        """Boolean mask (n_bands, n_bins): bin in band iff low <= f < high, DC excluded."""
        masks = np.stack([(freqs >= b.low_hz) & (freqs < b.high_hz) for b in self.bands])
        masks[:, freqs == 0.0] = False
        return masks


@dataclass(frozen=True)
class PowerSpectrum:
    """One-sided magnitude spectrum per channel.

    ``amplitudes`` has shape ``(n_channels, n_bins)`` with ``n_bins = N/2 + 1``
    for an N-sample window; ``freqs`` are the shared bin frequencies.
    """

    freqs: np.ndarray
    amplitudes: np.ndarray
    channel_names: tuple[str, ...]

    @property
    def bin_spacing(self) -> float:
        return float(self.freqs[1] - self.freqs[0])


@dataclass(frozen=True)
class BandProfile:
    """Band centroids C[b, ch] (microvolts) and power ratios P[b, ch] (dimensionless)."""

    centroids: np.ndarray
    ratios: np.ndarray
    channel_names: tuple[str, ...]


@dataclass(frozen=True)
class BrainRate:
    """Spectrum-weighted mean frequency in Hz, stamped with its channel aggregation."""

    value: float
    mode: AggregationMode

    def __post_init__(self) -> None:
        if self.mode not in ("sum", "mean"):
            raise ValidationError(f"unknown aggregation mode {self.mode!r}")
        if not np.isfinite(self.value) or self.value < 0:
            raise ValidationError(f"brain rate must be finite and non-negative, got {self.value}")


def amplitude_spectrum(samples: np.ndarray, sample_rate: float, taper: str = "rect") -> tuple[np.ndarray, np.ndarray]:
    """One-sided magnitude spectrum of each row of ``samples``.

    Returns ``(freqs, amplitudes)``. Scaling: interior bins carry 2|X_k|/N so a
    bin-aligned unit sinusoid reads 1.0; the DC and Nyquist bins carry |X_k|/N.
    ``taper='hann'`` applies a Hann window with amplitude correction 2/sum(w).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n = samples.shape[1]
    if n < 2:
        raise ValidationError("need at least two samples for a spectrum")
    if taper == "rect":
        spec = np.fft.rfft(samples, axis=1)
        scale = 2.0 / n
    elif taper == "hann":
        w = np.hanning(n)
        spec = np.fft.rfft(samples * w, axis=1)
        scale = 2.0 / w.sum()
    else:
        raise ValidationError(f"unknown taper {taper!r}")
    amps = np.abs(spec) * scale
    amps[:, 0] /= 2.0
    if n % 2 == 0:
        amps[:, -1] /= 2.0
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    return freqs, amps


def power_spectrum(window: Window, sample_rate: float, taper: str = "rect") -> PowerSpectrum:
    """Spectrum of one window; N samples yield N/2+1 bins spaced rate/N Hz."""
    freqs, amps = amplitude_spectrum(window.samples, sample_rate, taper=taper)
    names = window.channel_names
    if names is None:
        names = tuple(f"ch{i:02d}" for i in range(window.samples.shape[0]))
    return PowerSpectrum(freqs=freqs, amplitudes=amps, channel_names=names)


def band_centroids(spectrum: PowerSpectrum, scheme: BandScheme = BandScheme()) -> np.ndarray:
    """C[b, ch]: arithmetic mean of the amplitudes in each band, per channel."""
    masks = scheme.bin_masks(spectrum.freqs)
    counts = masks.sum(axis=1)
    empty = counts == 0
    if np.any(empty):
        bad = [scheme.bands[i].name for i in np.flatnonzero(empty)]
        raise ValidationError(
            f"bands {bad} contain no frequency bins at spacing {spectrum.bin_spacing} Hz"
        )
    return masks.astype(np.float64) @ spectrum.amplitudes.T / counts[:, None]


def band_ratios(
    centroids: np.ndarray, spectrum: PowerSpectrum, scheme: BandScheme = BandScheme()
) -> np.ndarray:
    """P[b, ch] = C[b, ch] / avg(FFT_ch) with the average over all in-band bins."""
    union = scheme.bin_masks(spectrum.freqs).any(axis=0)
    denom = spectrum.amplitudes[:, union].mean(axis=1)
    dead = denom == 0
    if np.any(dead):
        bad = [spectrum.channel_names[i] for i in np.flatnonzero(dead)]
        raise DegenerateChannelError(
            f"channels {bad} have zero in-band amplitude; power ratios are undefined"
        )
    return centroids / denom[None, :]


def band_profile(spectrum: PowerSpectrum, scheme: BandScheme = BandScheme()) -> BandProfile:
    centroids = band_centroids(spectrum, scheme)
    ratios = band_ratios(centroids, spectrum, scheme)
    return BandProfile(centroids=centroids, ratios=ratios, channel_names=spectrum.channel_names)


def brain_rate(
    ratios: np.ndarray, scheme: BandScheme = BandScheme(), mode: AggregationMode = "mean"
) -> BrainRate:
    """Aggregate sum_b f_b * P[b, ch] over channels, by plain sum or channel mean."""
    if not np.all(np.isfinite(ratios)):
        raise ValidationError("power ratios contain non-finite values")
    per_channel = scheme.mean_frequencies @ ratios
    if mode == "sum":
        value = float(per_channel.sum())
    elif mode == "mean":
        value = float(per_channel.mean())
    else:
        raise ValidationError(f"unknown aggregation mode {mode!r}")
    return BrainRate(value=value, mode=mode)


def window_brain_rate(
    window: Window,
    sample_rate: float,
    scheme: BandScheme = BandScheme(),
    mode: AggregationMode = "mean",
    taper: str = "rect",
) -> BrainRate:
    """Full per-window chain: spectrum -> centroids -> ratios -> brain rate."""
    spectrum = power_spectrum(window, sample_rate, taper=taper)
    profile = band_profile(spectrum, scheme)
    return brain_rate(profile.ratios, scheme, mode)
