"""Exception hierarchy shared by every module."""


class RwpLabError(Exception):
    """Base class for errors raised by rwplab."""


class InputError(RwpLabError, ValueError):
    """Malformed input: wrong shape, wrong type, out-of-domain scalar."""


class PreconditionError(RwpLabError, ValueError):
    """A guarantee hypothesis (e.g. delta < 1/3, rho <= 1/(4L)) does not hold."""


class ConvergenceError(RwpLabError, RuntimeError):
    """An iterative routine stopped before meeting its tolerance."""


class GuardError(InputError):
    """A size guard refused a computation (e.g. too many supports to enumerate)."""
