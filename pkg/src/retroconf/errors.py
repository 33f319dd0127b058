"""Exception hierarchy shared by the library and the command-line harness."""


class RetroconfError(Exception):
    """Base class for every error raised by this package."""


class UsageError(RetroconfError, ValueError):
    """Bad arguments: dimension mismatch, empty inputs, invalid settings."""


class KernelDomainError(UsageError):
    """Kernel evaluated outside its domain (e.g. NTK at the origin)."""


class NumericalError(RetroconfError, ArithmeticError):
    """A numerical precondition failed (degenerate leverage, lost definiteness)."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step

    def __str__(self) -> str:
        base = super().__str__()
        if self.step is None:
            return base
        return f"step {self.step}: {base}"


class SelectionError(NumericalError):
    """Every cell of a hyperparameter grid was numerically degenerate."""
