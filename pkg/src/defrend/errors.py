"""Exception hierarchy shared across the pipeline.

The three base classes map onto the CLI exit codes: ConfigError -> 2,
DataError -> 3, NumericFailure -> 4.
"""


class ConfigError(ValueError):
    """Invalid parameters, shapes, or identifiers."""


class InvalidParameter(ConfigError):
    pass


class ShapeMismatch(ConfigError):
    pass


class MissingMaterial(ConfigError):
    pass


class UnknownId(ConfigError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NonTriangularFace(ParseError):
    pass


class DataError(OSError):
    """Missing or corrupt persisted data."""


class BadMagic(DataError):
    pass


class TruncatedPayload(DataError):
    pass


class ManifestError(DataError):
    pass


class NumericFailure(RuntimeError):
    """Numeric breakdown while executing an otherwise valid request."""


class PlacementFailure(NumericFailure):
    pass


class DegenerateGeometry(NumericFailure):
    pass


class Divergence(NumericFailure):
    def __init__(self, message, init_index=None):
        super().__init__(message)
        self.init_index = init_index
