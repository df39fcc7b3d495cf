"""HDR reconstruction from bracketed LDR exposures and event streams."""

from evhdr.errors import CorruptFileError, InvalidInputError, TrainingError

__version__ = "0.1.0"

__all__ = ["CorruptFileError", "InvalidInputError", "TrainingError", "__version__"]
