"""Exception types shared across the package."""


class FormatError(Exception):
    """A binary file (WAV, checkpoint, fingerprint, database) is malformed.

    Carries the byte offset of the first inconsistency when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedFormatError(FormatError):
    """The container is well-formed but uses an encoding we do not read."""


class InputError(ValueError):
    """A runtime input violates an operation's preconditions."""


class ConfigError(ValueError):
    """Configuration mismatch between components (shapes, sizes, keys)."""


class StateError(RuntimeError):
    """An operation was called in a state that cannot serve it."""


class DegenerateEmbeddingError(FloatingPointError):
    """The encoder produced a pre-normalization embedding with ~zero norm."""
