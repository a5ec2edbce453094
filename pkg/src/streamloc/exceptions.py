"""Exception hierarchy shared by every subpackage."""


class StreamlocError(Exception):
    """Base class for all errors raised by streamloc."""


class DimensionError(StreamlocError, ValueError):
    """Tensor shapes are incompatible with an operation."""


class ArgumentError(StreamlocError, ValueError):
    """An argument is outside its valid domain."""


class LabelError(StreamlocError, ValueError):
    """A target or label is malformed or not defined for the input."""


class StateError(StreamlocError, RuntimeError):
    """An object is used before it is ready (missing buffers, untrained networks)."""


class CheckpointError(StreamlocError):
    """A checkpoint does not match the network it is loaded into."""


class ParseError(StreamlocError, ValueError):
    """A file could not be parsed."""


class IntegrityError(StreamlocError):
    """Files referenced by a dataset are missing or inconsistent."""


class SpecError(StreamlocError, ValueError):
    """A generation spec cannot be satisfied."""


class DataError(StreamlocError, ValueError):
    """A corpus is unusable for the requested training phase."""


class ConfigError(StreamlocError, ValueError):
    """A configuration file contains unknown or invalid fields."""
