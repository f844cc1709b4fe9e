"""Exception hierarchy shared by all sketchseg modules."""


class SketchSegError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(SketchSegError):
    """Tensor or raster shapes are incompatible with the requested operation."""


class ParameterError(SketchSegError):
    """An operation argument is out of its valid range."""


class StateError(SketchSegError):
    """Stateful object used out of order (e.g. backward twice, eval before train)."""


class ConfigError(SketchSegError):
    """A configuration value violates its invariant. Message names the field."""


class CheckpointError(SketchSegError):
    """Checkpoint file is truncated, malformed, or inconsistent with the model."""


class DataError(SketchSegError):
    """Dataset contents violate the contract (bad labels, shape mismatch, missing files)."""


class UndefinedMetricError(SketchSegError):
    """Metric has no defined value for the given input (e.g. zero stroke pixels)."""


class EmptySketchError(SketchSegError):
    """Raster contains no non-background pixels."""


class UnmappedLabelError(SketchSegError):
    """Label raster contains an RGB value absent from the remap table."""

    def __init__(self, message, rgbs=()):
        super().__init__(message)
        self.rgbs = tuple(rgbs)


class ScheduleError(SketchSegError):
    """Learning-rate schedule queried outside its domain."""
