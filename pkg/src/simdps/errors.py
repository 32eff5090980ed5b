"""Exception hierarchy shared across the package.

Everything raised on purpose derives from :class:`SimDPSError` so callers
(and the CLI exit-code mapping) can tell library failures from bugs.
"""


class SimDPSError(Exception):
    """Base class for all library errors."""


class DataError(SimDPSError, ValueError):
    """Invalid input data: bad shapes, ranges or file contents."""


class InvalidIntervalError(DataError):
    pass


class ShapeError(DataError):
    pass


class SignalTooShortError(DataError):
    pass


class AlignmentError(DataError):
    pass


class EmptyCorpusError(DataError):
    pass


class NoCandidateError(DataError):
    pass


class WavFormatError(DataError):
    """Malformed or unsupported RIFF/WAV content."""

    def __init__(self, message, chunk=None):
        if chunk is not None:
            message = f"[{chunk}] {message}"
        super().__init__(message)
        self.chunk = chunk


class ConfigError(DataError):
    pass


class DivergenceError(SimDPSError, FloatingPointError):
    """The sampler produced a non-finite score."""

    def __init__(self, step, sigma):
        super().__init__(f"non-finite score at step {step} (sigma={sigma:.6g})")
        self.step = step
        self.sigma = sigma


class CapabilityError(SimDPSError):
    """A denoiser was asked for something it cannot provide (e.g. a VJP)."""


class ExternalDenoiserError(SimDPSError):
    """Any failure talking to an out-of-process denoiser."""


class DenoiserProtocolError(ExternalDenoiserError):
    pass


class DenoiserDimensionError(ExternalDenoiserError):
    pass


class DenoiserTimeout(ExternalDenoiserError, TimeoutError):
    pass


class DenoiserConnectionError(ExternalDenoiserError, ConnectionError):
    pass
