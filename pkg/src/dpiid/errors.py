class DpiidError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(DpiidError, ValueError):
    pass


class NumericError(DpiidError, ArithmeticError):
    pass


class FrameError(DpiidError):
    """Ellipsoid frame could not be fitted."""


class EngineError(DpiidError):
    """The i.i.d. engine could not complete a task."""


class DataError(DpiidError):
    """Dataset file missing, malformed or of unexpected size."""
