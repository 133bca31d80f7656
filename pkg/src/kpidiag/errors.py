"""Exception types shared across the pipeline."""


class SchemaError(Exception):
    """A value, column, or predicate does not match the declared schema."""


class ConfigError(Exception):
    """Invalid or incomplete run configuration."""


class DumpParseError(Exception):
    """Malformed forest text dump."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class StageError(Exception):
    """A pipeline stage failed; carries the stage name and the cause."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
