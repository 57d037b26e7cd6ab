"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Array shapes do not match what an operation expects."""


class ParameterError(ValueError):
    """A numeric parameter is outside its valid domain."""


class DivergenceError(RuntimeError):
    """An iterative procedure produced a non-finite or exploding value."""


class LineSearchError(RuntimeError):
    """The line search was given a direction that does not descend."""


class ConfigError(ValueError):
    """A configuration file or option failed validation."""
