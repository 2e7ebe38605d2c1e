"""Exception hierarchy shared across the package."""


class ElectrofishError(Exception):
    """Base class for every error raised deliberately by this package."""


class ContractError(ElectrofishError, ValueError):
    """A caller violated an operation's preconditions (shapes, counts, layouts)."""


class ConfigError(ElectrofishError):
    """Invalid experiment configuration. ``key`` is the dotted path at fault."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class ConfigFileNotFoundError(ConfigError):
    pass


class ConfigSyntaxError(ConfigError):
    pass


class UnknownConfigKeyError(ConfigError):
    pass


class ConstraintError(ConfigError):
    pass


class LogError(ElectrofishError):
    """Base for episode-log container problems."""


class LogFormatError(LogError):
    """Bad magic bytes or unsupported container version."""


class LogTruncatedError(LogError):
    pass


class HashMismatchError(LogError):
    """Embedded hash does not match the content or the expected config."""


class CheckpointError(ElectrofishError):
    pass


class TrainingDivergedError(ElectrofishError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
