"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array shapes or indices violate an operation's contract."""


class ConfigError(ValueError):
    """A configuration file, schedule string, or CLI setting is invalid."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values or diverged."""


class DataIOError(OSError):
    """A dataset, checkpoint, or metrics file is missing, truncated, or inconsistent."""
