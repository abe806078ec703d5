"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ``FormatError``/``DataError`` -> 2,
``NumericalError`` -> 3.
"""


class EEGTokError(Exception):
    pass


class FormatError(EEGTokError):
    """Malformed input layout: ragged rows, bad sidecar, truncated body."""


class DataError(EEGTokError):
    """Well-formed input holding unusable values (NaN, empty corpus, ...)."""


class PreconditionError(EEGTokError):
    """An operation was called on data that violates its documented precondition."""


class SamplingError(EEGTokError):
    pass


class NumericalError(EEGTokError):
    """Non-finite activations, gradients or losses."""
