"""Exception types shared across the package."""


class ValidationError(ValueError):
    """A config file, input file, or threshold table failed validation."""


class UnknownClassError(ValidationError):
    """A proposal references a class with no configured threshold or anchor."""


class CloudFormatError(ValueError):
    """A point cloud file could not be parsed."""
