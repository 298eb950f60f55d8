class InfogradError(Exception):
    """Base class for every error raised by the library."""


class ValidationError(InfogradError, ValueError):
    """Inputs violate a documented precondition (shape, domain, probability, flag)."""


class FeasibilityError(InfogradError):
    """The requested computation is well-posed but too large or unsupported for the method."""


class NumericalError(InfogradError, ArithmeticError):
    """A numerical evaluation produced a non-finite value."""


# CLI exit codes per error family
EXIT_CODES = {
    ValidationError: 2,
    FeasibilityError: 3,
    NumericalError: 3,
}


def exit_code_for(error: BaseException) -> int:
    for error_type, code in EXIT_CODES.items():
        if isinstance(error, error_type):
            return code
    return 1
