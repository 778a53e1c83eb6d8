"""Exception hierarchy shared by all pipeline stages."""


class NeurorateError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(NeurorateError):
    """A file does not conform to its declared on-disk format."""


class ValidationError(NeurorateError):
    """An in-memory value or configuration violates a documented invariant."""


class DegenerateChannelError(ValidationError):
    """A channel carries no in-band spectral content, so power ratios are undefined."""


class DivergenceError(NeurorateError):
    """Training produced a non-finite loss."""
