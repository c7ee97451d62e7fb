"""Exception hierarchy shared by every mamkit module."""


class MamkitError(Exception):
    """Base class for all toolkit errors."""


class InvalidInput(MamkitError, ValueError):
    """An argument violates an operation's precondition."""


class ConfigError(MamkitError, ValueError):
    """A configuration value is missing, unknown, or inconsistent."""


class ManifestSchemaError(MamkitError, ValueError):
    """The manifest header lacks a required column."""


class ManifestRowError(MamkitError, ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TaskLabelError(MamkitError, ValueError):
    """An entry used for a task has no label for that task."""


class FormatError(MamkitError, ValueError):
    """A binary container (feature cache or checkpoint) is malformed."""


class FeatureCacheFormatError(FormatError):
    pass


class CheckpointFormatError(FormatError):
    pass


class DivergedRunError(MamkitError, RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss
