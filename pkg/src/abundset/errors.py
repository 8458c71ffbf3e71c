"""Exception hierarchy. Each family carries the CLI exit code it maps to."""


class AbundsetError(Exception):
    exit_code = 1


class DataError(AbundsetError):
    """Malformed, missing or inconsistent input data."""

    exit_code = 1


class SchemaError(DataError):
    pass


class ConflictError(DataError):
    pass


class ConfigError(AbundsetError, ValueError):
    """Invalid configuration value. ``field`` names the offending key."""

    exit_code = 2

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class NumericError(AbundsetError, ArithmeticError):
    exit_code = 3


class DimensionError(AbundsetError, ValueError):
    exit_code = 1


class StateError(AbundsetError, RuntimeError):
    exit_code = 1


class EmptyInputError(AbundsetError, ValueError):
    exit_code = 1
