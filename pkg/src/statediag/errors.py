"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ParameterError(ValueError):
    """A hyperparameter is outside its admissible range."""


class NumericError(ArithmeticError):
    """A numeric-domain violation (log of a nonpositive value, non-finite input)."""


class ContractError(RuntimeError):
    """An API contract was violated (non-scalar loss, missing gradient, ...)."""


class ParseError(ValueError):
    """A CSV or config file could not be parsed; the message names the line."""


class CalibrationError(ValueError):
    """Threshold calibration received unusable input."""


class ConfigError(ValueError):
    """Configuration values are inconsistent or unknown."""


class InputError(ValueError):
    """Runtime input violates a documented precondition."""
