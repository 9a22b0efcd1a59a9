"""Exception types raised by the change-detection engine.

The hierarchy mirrors the CLI exit codes: UsageError -> 1, DataError
(and subclasses) -> 2, anything else escaping the pipeline -> 3.
"""


class ChangeEngineError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(ChangeEngineError):
    """Bad command-line arguments or configuration values."""


class DataError(ChangeEngineError):
    """Invalid or inconsistent input data."""


# tensor file format
class BadMagicError(DataError):
    """File does not start with the tensor-format magic bytes."""


class BadHeaderError(DataError):
    """Tensor file header is present but unparsable."""


class UnsupportedDtypeError(DataError):
    """Tensor file declares a dtype outside {float32, uint8, int32}."""


class ShapeMismatchError(DataError):
    """Array shape disagrees with the header or with a peer array."""


class MissingFileError(DataError):
    """A file referenced by a manifest does not exist."""


class ValueOutOfRangeError(DataError):
    """Values fall outside the contractually allowed range."""


class ZeroDimensionError(DataError):
    """An array dimension that must be positive is zero."""


class EmptyPromptSetError(DataError):
    """A queried class maps to an empty prompt index set."""


class TooManySegmentsError(DataError):
    """More superpixels requested than pixels available."""


class EmptyDatasetError(DataError):
    """Evaluation requested over zero image pairs."""


class SceneSpecError(DataError):
    """Synthetic scene specification is self-inconsistent."""
