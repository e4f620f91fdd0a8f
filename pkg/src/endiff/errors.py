"""Exception types shared across the library."""


class EndiffError(Exception):
    """Base class for all library errors."""


class DimensionError(EndiffError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(EndiffError, ValueError):
    """A caller violated a documented precondition."""


class ParameterError(EndiffError, ValueError):
    """A configuration value is outside its valid range."""


class DomainError(EndiffError, ValueError):
    """A numeric argument lies outside the function's domain."""


class FormatError(EndiffError, ValueError):
    """An input file failed to parse; message names the file and line."""


class UndefinedMetricError(EndiffError, ValueError):
    """The requested metric is undefined for the given labels."""
