"""Exception types. Each maps to a CLI exit code via ``exit_code``."""


class SadiError(Exception):
    exit_code = 1


class ConfigError(SadiError, ValueError):
    """Invalid hyperparameters, configuration files or argument ranges."""

    exit_code = 1


class ShapeError(SadiError, ValueError):
    exit_code = 1


class DataError(SadiError, ValueError):
    """Malformed input files or degenerate data."""

    exit_code = 2


class DegenerateBatchError(DataError):
    """A batch or mask with no imputation targets."""


class NumericalError(SadiError, ArithmeticError):
    exit_code = 3


class ConsistencyError(SadiError, RuntimeError):
    """Internal state disagrees with itself (e.g. a parameter without a gradient)."""
