"""Exception types shared across the package."""


class ClupError(Exception):
    """Base class for all library errors."""


class ConfigError(ClupError):
    """Invalid configuration value or unusable input (CLI exit code 2)."""


class ShapeError(ClupError):
    """Dimension mismatch between arrays."""


class NumericError(ClupError):
    """Non-finite values or a failed numerical operation (CLI exit code 3)."""


class EmptyRefinementError(ClupError):
    """Pseudo-label refinement retained no samples (CLI exit code 4)."""


class FormatError(ClupError):
    """Violation of one of the binary or text file formats."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class BadVersionError(FormatError):
    """Unsupported format version."""


class BadFlagsError(FormatError):
    """Reserved flag bits are set."""


class TruncatedFileError(FormatError):
    """File is shorter than its header promises."""


class ChecksumError(FormatError):
    """Integrity byte does not match the file contents."""


class NonFiniteDataError(FormatError):
    """Payload contains NaN or infinite values."""


class CsvParseError(FormatError):
    """Malformed CSV input; message carries the line number."""


class SinkhornOverflowError(NumericError):
    """exp(scores / epsilon) overflowed or underflowed to zero."""
