"""Exception hierarchy.

Every error maps to one CLI exit code (see :data:`EXIT_CODES`).
"""


class CarpetKSError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class CarpetSpecError(CarpetKSError, ValueError):
    """The digit set does not describe a usable carpet."""


class NotACellError(CarpetKSError, ValueError):
    """A lattice index or word does not address a cell of the carpet."""


class LevelMismatchError(CarpetKSError, ValueError):
    """A cell function was paired with a graph or operator at another level."""


class ConfigError(CarpetKSError, ValueError):
    """Invalid run or solver configuration."""


class SubcriticalError(CarpetKSError):
    """The estimated rescaling factor is not above one."""


class ConvergenceError(CarpetKSError, RuntimeError):
    """An iterative solver stopped before meeting its tolerances."""

    exit_code = 2

    def __init__(self, message, *, iterations=None, residual=None, energy=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.energy = energy


class RejectionRateError(CarpetKSError, RuntimeError):
    """Too many Monte-Carlo proposals fell outside the target ball."""

    exit_code = 2


class BracketWidthError(CarpetKSError, RuntimeError):
    """Ball-mass brackets are too wide for the requested accuracy."""

    exit_code = 2


class BudgetExceededError(CarpetKSError, MemoryError):
    """Cell enumeration would exceed the configured budget."""

    exit_code = 3


EXIT_CODES = {
    "ok": 0,
    "config": 1,
    "numerical": 2,
    "budget": 3,
}
