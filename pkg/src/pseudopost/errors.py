class PseudopostError(Exception):
    """Base class for library errors."""


class ConfigError(PseudopostError, ValueError):
    """Invalid configuration or arguments."""


class SchemaError(PseudopostError, ValueError):
    """A data file violates its schema or a data invariant."""


class RankError(SchemaError):
    """Covariate matrix is rank deficient."""

    def __init__(self, message, rank=None):
        super().__init__(message)
        self.rank = rank


class GenerationError(PseudopostError):
    """Population generation produced an out-of-range value."""


class NumericalError(PseudopostError, ArithmeticError):
    """A matrix factorization or update failed numerically."""
