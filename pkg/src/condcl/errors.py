"""Exception types shared across the package."""


class CondclError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatchError(CondclError, ValueError):
    """Operands have incompatible shapes."""


class MissingEmbeddingError(CondclError, LookupError):
    """A store-backed provider was asked for a text it does not hold."""


class FormatError(CondclError, ValueError):
    """An input file violates its documented format."""


class ConfigError(CondclError, ValueError):
    """A run configuration is malformed or inconsistent."""


class TrainingDivergedError(CondclError, RuntimeError):
    """Training produced a non-finite loss and was aborted."""
