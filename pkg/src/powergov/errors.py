"""Exception hierarchy.

The CLI maps ``ConfigError`` to exit code 1 and ``DataError`` to exit code 2;
anything else escaping a command is an internal error (exit code 3).
"""


class PowerGovError(Exception):
    """Base class for all package errors."""


class ConfigError(PowerGovError):
    """Invalid configuration values or keys."""


class DataError(PowerGovError):
    """Bad or missing input data."""


# telemetry
class MalformedRow(DataError):
    pass


class NonMonotonicTime(DataError):
    pass


class EmptyTrace(DataError):
    pass


class NoSuchFile(DataError):
    pass


class RangeOutsideTrace(DataError):
    pass


class WindowTooSmall(DataError):
    pass


# envsim
class ConfigInvalid(ConfigError):
    pass


class ConfigTooLarge(ConfigError):
    pass


class SteppedAfterDone(PowerGovError):
    pass


# nn
class ShapeMismatch(PowerGovError, ValueError):
    pass


class StaleCache(PowerGovError):
    pass


# ppo
class EmptySequence(PowerGovError, ValueError):
    pass


class LengthMismatch(PowerGovError, ValueError):
    pass


class BufferNotFull(PowerGovError):
    pass


# report / cli
class TraceTooShort(DataError):
    pass


class SinkError(DataError):
    pass


class ChecksumMismatch(DataError):
    pass
