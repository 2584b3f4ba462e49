"""
Error types for Record Weaver
Every failure the library raises derives from RecordWeaverError
"""

from typing import Optional


class RecordWeaverError(Exception):
    """Base class for all Record Weaver errors"""


class SchemaError(RecordWeaverError):
    """Schema text could not be parsed or compiled"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(RecordWeaverError):
    """Invalid or inconsistent run configuration"""


class DataError(RecordWeaverError):
    """Input data is missing, unreadable or does not fit the schema"""


class VocabularyError(DataError):
    """A string contains a symbol outside the model vocabulary"""


class ShapeError(RecordWeaverError, ValueError):
    """Tensor dimensions do not match what a module expects"""


class NonFiniteError(RecordWeaverError, FloatingPointError):
    """A NaN or Inf appeared in a loss, gradient or statistic"""


class CheckpointError(RecordWeaverError):
    """Checkpoint missing or incompatible with the current schema/config"""


class OutputExistsError(RecordWeaverError):
    """Refusing to overwrite an existing output directory"""
