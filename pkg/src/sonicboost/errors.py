"""Exception types shared across the package.

Each error carries the process exit code the command line maps it to.
"""


class SonicBoostError(Exception):
    exit_code = 4


class ConfigError(SonicBoostError):
    exit_code = 2


class SchemaError(SonicBoostError):
    exit_code = 2


class InvalidArgumentError(SonicBoostError, ValueError):
    exit_code = 2


class DataError(SonicBoostError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyInputError(DataError, ValueError):
    pass


class InvalidInputError(DataError, ValueError):
    pass


class ModelFormatError(DataError):
    pass


class VersionError(ModelFormatError):
    pass


class UnsupportedSizeError(SonicBoostError, ValueError):
    exit_code = 2


class InvariantError(SonicBoostError):
    exit_code = 4
