"""Exception types shared across the package."""


class MpcmrError(Exception):
    """Base class for all package-specific errors."""


class DataError(MpcmrError):
    """Raised when input data violate a schema or alignment requirement."""


class NumericalError(MpcmrError):
    """Raised when an estimation routine fails to produce a usable result."""


class StudyError(MpcmrError):
    """Raised when too many replicates of a simulation study fail."""
