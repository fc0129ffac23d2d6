"""Exception hierarchy shared by every subsystem."""


class IrmenError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(IrmenError, ValueError):
    """A physical or numerical parameter is outside its valid range."""


class StructuralError(IrmenError, ValueError):
    """Array shapes or grid dimensions do not line up."""


class CompileError(IrmenError):
    """A network layer cannot be mapped onto CeNN templates."""


class FormatError(IrmenError):
    """A data file is malformed or truncated."""


class ChecksumError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TrainingError(IrmenError):
    """Training diverged; carries the last finite diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(ParameterError):
    """The run configuration has unknown keys or invalid values."""


class CheckFailed(IrmenError):
    """An in-run assertion on produced outputs did not hold."""
