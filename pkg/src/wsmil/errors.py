"""Exception hierarchy shared across the package."""


class WsmilError(Exception):
    """Base class for all package errors."""


class ParameterError(WsmilError, ValueError):
    """Invalid numeric or configuration parameter."""


class FormatError(WsmilError):
    """Malformed file contents (bad header, wrong magic, truncated data)."""


class UnsupportedFormatError(FormatError):
    """Well-formed file using an encoding we do not decode."""


class TooShortError(WsmilError, ValueError):
    """Signal shorter than one analysis window."""


class ShapeError(WsmilError, ValueError):
    """Tensor shapes incompatible for the requested operation."""


class ContractError(WsmilError, ValueError):
    """A precondition of an operation was violated."""


class ManifestError(WsmilError):
    """Problem in a weak manifest or strong annotation file."""


class SamplerError(WsmilError):
    """Batch sampler cannot satisfy its balancing constraint."""


class TrainingError(WsmilError):
    """Training diverged or produced non-finite values."""
