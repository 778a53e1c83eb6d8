"""Self-supervised cognitive-load modelling from multi-channel EEG.

The pipeline: recordings (real or synthetic) are segmented into sliding
windows; each window yields per-band spectral centroids, a brain-rate index,
and a spatially interpolated head-map tensor; sequences of tensors targeting
the next window's brain rate feed a convolutional-recurrent regression
network trained in two stages.
"""

__version__ = "0.1.0"

from .errors import (
    DegenerateChannelError,
    DivergenceError,
    FormatError,
    NeurorateError,
    ValidationError,
)

__all__ = [
    "DegenerateChannelError",
    "DivergenceError",
    "FormatError",
    "NeurorateError",
    "ValidationError",
    "__version__",
]
