"""Exception types shared across the engine."""


class WavellmError(Exception):
    """Base class for engine errors."""


class ShapeError(WavellmError, ValueError):
    """Tensor shapes or extents do not satisfy an operation's contract."""


class GraphError(WavellmError, ValueError):
    """Invalid graph construction or validation failure."""


class ModelFormatError(WavellmError, ValueError):
    """Base class for model file errors."""


class BadMagicError(ModelFormatError):
    """Model file does not start with the expected magic bytes."""


class VersionError(ModelFormatError):
    """Model file version is not supported."""


class TruncatedFileError(ModelFormatError):
    """Model file ended before all declared data was read."""


class ContextOverflowError(WavellmError, ValueError):
    """KV cache is full; no room for further tokens."""


class GenerationTimeout(WavellmError):
    """Cooperative per-run deadline expired during generate()."""

