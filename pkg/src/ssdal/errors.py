"""Exception hierarchy shared by every module.

Each class carries the process exit code the CLI maps it to.
"""


class SSDALError(Exception):
    exit_code = 1


class ConfigError(SSDALError, ValueError):
    exit_code = 2


class ShapeError(SSDALError, ValueError):
    exit_code = 5


class ValidationError(SSDALError, ValueError):
    exit_code = 5


class DataError(SSDALError, ValueError):
    exit_code = 5


class MissingPrerequisiteError(SSDALError, FileNotFoundError):
    exit_code = 4
