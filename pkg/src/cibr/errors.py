"""Exception types shared across the package.

Every failure mode callers are expected to handle gets its own class so
tests and the service layer can match on type rather than message text.
"""


class CibrError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CibrError):
    """Operands have incompatible shapes, ranks, or arities."""


class DomainError(CibrError):
    """An input lies outside an operation's mathematical domain."""


class DegenerateEmbeddingError(CibrError):
    """A row to be L2-normalized has (near-)zero norm."""


class DivergenceError(CibrError):
    """A non-finite value appeared in a loss, gradient, or update."""


class SampleCountError(CibrError):
    """Too few samples for an estimator to be defined."""


class AlignmentError(CibrError):
    """Paired inputs disagree on their sample counts."""


class ConstructionError(CibrError):
    """A data or model spec fails its validity checks."""


class IllConditionedError(CibrError):
    """A covariance matrix is too close to singular to evaluate."""


class ParseError(CibrError):
    """A file cell or document could not be parsed."""


class CoverageError(CibrError):
    """A class has no samples where at least one is required."""


class LabelError(CibrError):
    """A class label lies outside the declared range."""


class ConfigError(CibrError):
    """A run configuration is invalid."""


class CheckpointError(CibrError):
    """A checkpoint file is malformed or inconsistent with its config."""


class IoError(CibrError):
    """A file could not be read or written."""
