"""Exception hierarchy for the redunet package."""


class RedunetError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(RedunetError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateInputError(InvalidInputError):
    """Input is structurally valid but numerically degenerate (e.g. a zero class)."""


class InconsistentParameterError(InvalidInputError):
    """Stored model parameters disagree with supplied quantities."""


class NumericalError(RedunetError, RuntimeError):
    """A numerical routine failed or produced non-finite values."""


class NumericalDegradationError(NumericalError):
    """Propagated second-order statistics drifted outside the PSD cone."""


class FormatError(RedunetError, ValueError):
    """A dataset or model file does not match its declared binary format."""


class ChecksumError(FormatError):
    """Stored payload checksum does not match the file contents."""


class VersionError(FormatError):
    """File was written by an unsupported container version."""
