"""Exception hierarchy shared across the package."""


class ZooAdaptError(Exception):
    """Base class for all package-specific errors."""
