"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not line up with the network or the normalization stats."""


class SchemaError(ValueError):
    """A CSV header is missing a required column."""


class DataError(ValueError):
    """A data cell could not be used (non-numeric or non-finite)."""


class SamplingError(ValueError):
    """A pool cannot supply the requested episode shape."""


class ConfigError(ValueError):
    """A run configuration failed validation."""


class CheckpointError(ValueError):
    pass


class CheckpointParseError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointValidationError(CheckpointError):
    pass
