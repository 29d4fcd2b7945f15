"""Exception types shared across the runtime."""


class KwsError(Exception):
    """Base class for all runtime errors."""


class InvalidInputError(KwsError, ValueError):
    """Caller passed data that violates an operation's preconditions."""


class ConfigError(KwsError, ValueError):
    """A configuration object violates its own invariants."""


class ContractError(KwsError):
    """Shape or metadata mismatch between components that should agree."""


class UnsupportedWavError(KwsError):
    """WAV file exists but is not PCM s16le mono 16 kHz."""


class DatasetLayoutError(KwsError):
    """Dataset directory does not follow the expected layout."""


class ModelFormatError(KwsError):
    """Base class for model-file encode/decode failures."""


class BadMagicError(ModelFormatError):
    """File does not start with the model-format magic bytes."""


class UnsupportedVersionError(ModelFormatError):
    """File declares a format version this build cannot read."""


class TruncatedFileError(ModelFormatError):
    """File is shorter than its declared size."""


class ChecksumError(ModelFormatError):
    """Stored CRC32 does not match the file contents."""


class GraphValidationError(ModelFormatError):
    """Decoded layer list fails graph-level validation."""
