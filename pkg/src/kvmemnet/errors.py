"""Exception types shared across the package."""


class KvmError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(KvmError):
    """Operand dimensions are incompatible with the requested operation."""


class NumericError(KvmError):
    """A computation produced or consumed non-finite values."""


class StateError(KvmError):
    """An object was used in an order its lifecycle does not allow."""


class DataError(KvmError):
    """A dataset file or episode violates the expected schema."""


class ConfigError(KvmError):
    """Invalid configuration value or combination of values."""
