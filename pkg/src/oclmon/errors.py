"""Exception types raised across the package."""


class OCLError(Exception):
    """Base class for all package errors."""


class DimensionError(OCLError, ValueError):
    """Array shapes are inconsistent with the model dimensions."""


class ConfigError(OCLError, ValueError):
    """An experiment or model configuration is invalid."""


class IllConditionedError(OCLError, ArithmeticError):
    """A normal-equations matrix is numerically singular."""

    def __init__(self, message, parameter=None, condition=None):
        super().__init__(message)
        self.parameter = parameter
        self.condition = condition


class ReplayFormatError(OCLError, ValueError):
    """A replay CSV file does not follow the documented schema."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line
