"""Exception types raised across the package."""


class ShapeFocusError(Exception):
    """Base class for package errors."""


class ValidationError(ShapeFocusError, ValueError):
    """Input violates a documented precondition."""


class MeshFormatError(ShapeFocusError, ValueError):
    """A mesh file could not be parsed."""


class DomainError(ShapeFocusError, ValueError):
    """Argument outside the domain of a formula (e.g. focus distance <= focal length)."""


class UndefinedResultError(ShapeFocusError, ValueError):
    """The requested quantity is undefined for this input (e.g. invisible sample)."""


class RankDeficiencyError(ShapeFocusError, ValueError):
    """Point configuration is degenerate (collinear or coincident)."""


class ConfigError(ShapeFocusError, ValueError):
    """Configuration file is missing, malformed or inconsistent."""


class StageError(ShapeFocusError, RuntimeError):
    """A pipeline stage failed."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
