"""Exception types shared across the package."""


class LineGuardError(Exception):
    """Base class for errors raised by this package."""


class InvalidParameterError(LineGuardError, ValueError):
    """A physical or algorithmic parameter is out of its admissible range."""


class InvalidWindowError(LineGuardError, ValueError):
    """A measurement window violates a structural precondition."""


class DegradedDataError(LineGuardError):
    """Too many samples are missing for the window to be trustworthy."""


class SimulationError(LineGuardError):
    """The transient solver could not produce a valid waveform."""


class DataIntegrityError(LineGuardError):
    """Non-finite or internally inconsistent numbers reached the decision stage."""
