"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes or vector lengths do not agree."""


class StructureError(ValueError):
    """An input violates a structural requirement (e.g. antisymmetry)."""


class NumericError(ValueError):
    """Non-finite values where finite ones are required."""


class InputError(ValueError):
    """Invalid argument values (empty data, bad ranges, ...)."""


class ModelFormatError(ValueError):
    """A persisted model or transform file is missing, truncated or malformed."""


class ParseError(ValueError):
    """A CSV file could not be parsed; carries the offending line number."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class ConfigError(ValueError):
    """Experiment configuration is invalid."""
