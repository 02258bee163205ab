"""Exception hierarchy shared by all diffeoraptor modules."""


class RegistrationError(Exception):
    """Base class for every error raised by this package."""


class StructuralError(RegistrationError, ValueError):
    """Inputs have incompatible shapes, bands or invalid parameters."""


class NumericalError(RegistrationError, ArithmeticError):
    """A numerical invariant was violated (e.g. loss of Hermitian symmetry)."""


class DivergenceError(NumericalError):
    """Non-finite values appeared while integrating or optimizing."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class MetricUndefinedError(RegistrationError):
    """The similarity metric has no accepted patch to average over."""


class StepSizeError(RegistrationError):
    """Backtracking could not find an energy-decreasing step."""


class NiftiParseError(RegistrationError):
    """Malformed or truncated NIfTI-1 file."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class UnsupportedFormatError(RegistrationError):
    """The NIfTI datatype code is not one this reader handles."""

    def __init__(self, code):
        super().__init__(f"unsupported NIfTI datatype code {code}")
        self.code = code
