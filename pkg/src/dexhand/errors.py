"""Exception types shared across the toolkit."""


class DexhandError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(DexhandError, ValueError):
    """An operation received inputs violating its preconditions."""


class ModelError(DexhandError):
    """Hand model file is malformed or violates a model invariant."""


class CalibrationIncompleteError(DexhandError):
    """Calibration reference set is missing required pose labels."""

    def __init__(self, missing):
        self.missing = tuple(missing)
        super().__init__(f"calibration incomplete, missing labels: {', '.join(self.missing)}")


class DegenerateCalibrationError(DexhandError):
    """Calibration extrema coincide or the thumb quadrilateral is degenerate."""


class SimulationFaultError(DexhandError):
    """The servo loop produced a non-finite state and was halted."""


class InvalidTransitionError(DexhandError):
    """An episode was stepped after it finished."""


class DemoFormatError(DexhandError):
    """A demonstration file is corrupt or violates an invariant.

    ``offset`` is the byte offset of the offending record when known.
    """

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class VersionError(DemoFormatError):
    """A persisted artifact has an unsupported format version."""


class ConfigError(DexhandError):
    """Invalid run configuration (bad algorithm/demo combinations, rates, ...)."""


class TrainingFailureError(DexhandError):
    """Training diverged (non-finite loss or parameters)."""


class ProtocolError(DexhandError):
    """A wire message failed to parse or validate."""

    def __init__(self, code, message):
        self.code = code
        super().__init__(message)
