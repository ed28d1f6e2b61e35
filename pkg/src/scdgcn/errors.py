"""Exception hierarchy shared by every module.

The CLI maps each family onto an exit code: usage/configuration -> 2,
data/parse -> 3, I/O -> 4.
"""


class ScdGcnError(Exception):
    exit_code = 1


class ConfigurationError(ScdGcnError, ValueError):
    exit_code = 2


class UsageError(ScdGcnError, RuntimeError):
    exit_code = 2


class ShapeError(ScdGcnError, ValueError):
    exit_code = 2


class DataError(ScdGcnError, ValueError):
    exit_code = 3


class ParseError(DataError):
    exit_code = 3


class StorageError(ScdGcnError, OSError):
    exit_code = 4


class CheckpointError(StorageError):
    pass
