"""Exception types shared across the package."""


class QuantError(Exception):
    """Base class for every error this package raises on purpose."""


class InvalidInputError(QuantError, ValueError):
    """Non-finite values, empty tensors, or out-of-range arguments."""


class ConfigError(QuantError, ValueError):
    """Invalid or inconsistent quantization configuration."""


class FormatError(QuantError):
    """Malformed tensor file or container."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class TruncatedFileError(FormatError):
    """File ends before the header or payload is complete."""


class UnsupportedDtypeError(FormatError):
    """Dtype byte outside the defined range."""
