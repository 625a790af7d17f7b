"""Exception hierarchy.

Every error raised on purpose derives from :class:`EdgeTwinError`; the CLI maps
the three families (config, data, invariant) onto distinct exit codes.
"""


class EdgeTwinError(Exception):
    """Base class for all package errors."""


class ConfigError(EdgeTwinError, ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class DataError(EdgeTwinError, ValueError):
    """Input data cannot be used as requested."""


class InvariantViolation(EdgeTwinError, AssertionError):
    """An internal consistency check failed."""


class MissingColumn(DataError):
    def __init__(self, name):
        super().__init__(f"missing column {name!r}")
        self.name = name


class NonContiguousVehicle(DataError):
    def __init__(self, vehicle_id):
        super().__init__(f"vehicle {vehicle_id} has gaps in its frame coverage")
        self.vehicle_id = vehicle_id


class NonMonotoneFrames(DataError):
    pass


class EmptyTrace(DataError):
    pass


class InfeasibleDensity(DataError):
    pass


class UnknownVehicle(DataError):
    def __init__(self, vehicle_id, frame=None):
        where = "" if frame is None else f" at frame {frame}"
        super().__init__(f"unknown vehicle {vehicle_id}{where}")
        self.vehicle_id = vehicle_id


class FrameOutOfRange(DataError):
    pass


class InsufficientHistory(DataError):
    pass


class EmptyDataset(DataError):
    pass


class EmptyErrors(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class MissingModel(DataError):
    def __init__(self, horizon):
        super().__init__(f"no model for horizon {horizon}")
        self.horizon = horizon


# Pipeline code uses the longer name; both refer to the same condition.
MissingHorizonModel = MissingModel


class OutOfSegment(DataError):
    pass


class MixedFrames(DataError):
    pass


class StaleMap(DataError):
    pass


class UnreachableBox(DataError):
    pass


class TraceTooShort(DataError):
    pass


class BadParams(DataError):
    pass
