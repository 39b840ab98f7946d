"""Exception types raised across the package.

All of them derive from :class:`ValueError` so callers that only care about
"bad input" can catch that.
"""


class HybridCaviError(ValueError):
    """Base class for every error raised by this package."""


class InvalidCovarianceError(HybridCaviError):
    pass


class InvalidCorrelationError(InvalidCovarianceError):
    pass


class DimensionError(HybridCaviError):
    pass


class DomainError(HybridCaviError):
    pass


class ConfigurationError(HybridCaviError):
    pass


class InvalidInitializationError(HybridCaviError):
    pass


class InsufficientSamplesError(HybridCaviError):
    pass


class DegenerateMomentsError(HybridCaviError):
    pass


class SupportViolationError(HybridCaviError):
    pass


class CoverageError(HybridCaviError):
    pass
