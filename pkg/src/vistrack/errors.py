"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is out of range or inconsistent."""


class FormatError(ValueError):
    """A serialized file or record violates its schema."""


class ShapeError(ValueError):
    """Array arguments have incompatible shapes."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss."""
