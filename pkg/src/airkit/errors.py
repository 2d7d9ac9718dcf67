"""Exception hierarchy shared by every airkit module."""


class AirkitError(Exception):
    """Base class for all airkit failures."""


class SceneError(AirkitError):
    """Malformed or inconsistent scene-graph document."""

    def __init__(self, message, *, object_id=None, line=None, column=None):
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)
        self.object_id = object_id
        self.line = line
        self.column = column


class ProgramError(AirkitError):
    """Reasoning program that fails to parse or validate."""

    def __init__(self, message, *, step=None, line=None, column=None):
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)
        self.step = step
        self.line = line
        self.column = column


class MappingError(AirkitError):
    """Raw GQA operation missing from the mapping table."""


class UndefinedCorrelationError(AirkitError, ValueError):
    """Correlation requested for constant input."""


class ConfigError(AirkitError):
    """Invalid run configuration or unreadable input path."""
