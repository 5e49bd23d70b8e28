"""Exception hierarchy. ``exit_code`` is what the CLI returns for each category."""


class RetinnError(Exception):
    exit_code = 1
    category = "error"


class ConfigError(RetinnError, ValueError):
    exit_code = 2
    category = "config"


class UsageError(ConfigError):
    category = "usage"


class DataError(RetinnError, ValueError):
    exit_code = 3
    category = "data"


class ParseError(DataError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class TrainingError(RetinnError, RuntimeError):
    exit_code = 4
    category = "training"


class InferenceError(RetinnError, RuntimeError):
    exit_code = 5
    category = "inference"
