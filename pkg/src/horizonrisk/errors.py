"""Exception hierarchy shared by every backend."""


class HorizonRiskError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(HorizonRiskError, ValueError):
    pass


class PositivityError(InvalidArgumentError):
    """A Girsanov kernel would produce a non-positive tree density."""


class UnsupportedError(HorizonRiskError, NotImplementedError):
    pass


class NumericalError(HorizonRiskError, ArithmeticError):
    def __init__(self, message, level=None):
        super().__init__(message if level is None else f"{message} (level {level})")
        self.level = level


class CapacityError(HorizonRiskError, MemoryError):
    pass


class ConfigError(HorizonRiskError):
    """Manifest problem; ``pointer`` is a JSON pointer to the offending field."""

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.message = message
        self.pointer = pointer
