"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class ArraybinError(Exception):
    exit_code = 2


class ConfigError(ArraybinError, ValueError):
    exit_code = 1


class DataError(ArraybinError, ValueError):
    exit_code = 2


class DimensionMismatch(DataError):
    """Raised when two tensors cannot be compared, e.g. ICPD vectors from
    arrays with different microphone counts."""


class NumericalError(ArraybinError, ArithmeticError):
    exit_code = 3
