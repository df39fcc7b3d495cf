class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class CorruptFileError(ValueError):
    """Raised when a file on disk does not match its declared format."""


class TrainingError(RuntimeError):
    """Raised when optimisation diverges (e.g. a non-finite loss)."""
