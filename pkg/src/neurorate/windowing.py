"""Fixed-length sliding-window segmentation.

Window and shift sizes must land on integer sample counts; anything else is a
hard error rather than a silent rounding, because all downstream counts
(windows per trial, sequences per video) depend on exactness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .signal_io import EegRecording


@dataclass(frozen=True)
class WindowConfig:
    """Sliding-window geometry: length in seconds, shift in milliseconds."""

    length_s: float = 2.0
    shift_ms: float = 125.0

    def window_samples(self, sample_rate: float) -> int:
        return _exact_samples(self.length_s * sample_rate, f"window length {self.length_s} s")

    def shift_samples(self, sample_rate: float) -> int:
        return _exact_samples(self.shift_ms * sample_rate / 1000.0, f"window shift {self.shift_ms} ms")


def _exact_samples(value: float, what: str) -> int:
    n = round(value)
    if abs(value - n) > 1e-9 or n < 1:
        raise ValidationError(f"{what} is {value} samples at the active rate; need a positive integer")
    return int(n)


@dataclass(frozen=True)
class Window:
    """One window of a recording; ``samples`` is a view into the source array.

    ``channel_names`` mirrors the source recording's row order; it may be None
    for windows built directly from arrays in tests or ad-hoc analyses.
    """

    start_index: int
    samples: np.ndarray  # (n_channels, window_samples)
    trial_id: str
    channel_names: tuple[str, ...] | None = None


def window_count(total_samples: int, window_samples: int, shift_samples: int) -> int:
    """Number of complete windows that fit: floor((T - k) / w) + 1."""
    if total_samples < window_samples:
        return 0
    return (total_samples - window_samples) // shift_samples + 1


def segment(recording: EegRecording, config: WindowConfig = WindowConfig()) -> list[Window]:
    """Split ``recording`` into fully contained windows starting at sample 0.

    Windows are returned in time order; starts form an arithmetic sequence
    with the shift as the common difference.
    """
    width = config.window_samples(recording.sample_rate)
    shift = config.shift_samples(recording.sample_rate)
    count = window_count(recording.n_samples, width, shift)
    if count == 0:
        raise ValidationError(
            f"recording {recording.trial_id!r} has {recording.n_samples} samples, "
            f"shorter than one {width}-sample window"
        )
    return [
        Window(
            start_index=s,
            samples=recording.samples[:, s : s + width],
            trial_id=recording.trial_id,
            channel_names=recording.channel_names,
        )
        for s in range(0, count * shift, shift)
    ]
