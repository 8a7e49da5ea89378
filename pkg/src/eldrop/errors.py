"""Exception types shared across the package."""


class EldropError(Exception):
    """Base class for all errors raised by eldrop."""


class DimensionError(EldropError, ValueError):
    pass


class DomainError(EldropError, ValueError):
    pass


class CapacityError(EldropError, ValueError):
    """Raised when exhaustive mask enumeration would exceed the unit cap."""


class ConvergenceError(EldropError, RuntimeError):
    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate


class NumericError(EldropError, FloatingPointError):
    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class TrainingError(NumericError):
    def __init__(self, message, epoch, batch, layer=None):
        super().__init__(message, layer)
        self.epoch = epoch
        self.batch = batch


class FormatError(EldropError, ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ConfigError(EldropError, ValueError):
    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.path = path
