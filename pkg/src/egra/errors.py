class EgraError(Exception):
    pass


class ConfigError(EgraError):
    pass


class DataError(EgraError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ShapeError(DataError):
    pass


class TrainingDivergence(EgraError):
    pass
