"""Exception types shared across the package."""


class AlganError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(AlganError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(AlganError, ValueError):
    """A numeric operation received an input outside its domain."""


class ContractError(AlganError, RuntimeError):
    """An API precondition was violated."""


class ConfigError(AlganError, ValueError):
    """A configuration value is missing, unknown, or out of range.

    ``field`` carries the dotted path of the offending entry when known.
    """

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        self.reason = message
        super().__init__(f"{field}: {message}" if field else message)


class TrainingError(AlganError, RuntimeError):
    """Training produced a non-finite value."""


class ParseError(AlganError, ValueError):
    """An input file could not be parsed."""


class ValidationError(AlganError, ValueError):
    """Input data violates a semantic requirement (e.g. anomalies in train)."""


class MetricError(AlganError, ValueError):
    """A metric cannot be computed for the given input."""
