"""Error taxonomy shared across the package."""


class ForgeLocError(ValueError):
    """Base class for all package errors."""


class DimensionError(ForgeLocError):
    """Tensor shapes incompatible with the requested operation."""


class DomainError(ForgeLocError):
    """Scalar argument outside its valid range."""


class ConfigurationError(ForgeLocError):
    """Invalid or inconsistent configuration."""


class FormatError(ForgeLocError):
    """On-disk artifact malformed or inconsistent."""
