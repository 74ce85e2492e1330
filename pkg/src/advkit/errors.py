"""Exception types shared across the toolkit."""


class AdvkitError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(AdvkitError, ValueError):
    """Operands or layers have incompatible shapes."""


class NumericError(AdvkitError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class StateError(AdvkitError, RuntimeError):
    """Operation invoked in an invalid order (e.g. backward without a graph)."""


class FormatError(AdvkitError, ValueError):
    """A file does not match its declared binary format."""


class ConfigError(AdvkitError, ValueError):
    """Invalid configuration file, key, or CLI argument."""
