"""Exceptions for numerical failures (CLI exit code 3)."""


class NumericalFailure(ArithmeticError):
    pass


class BlowUpError(NumericalFailure):
    """A run produced a non-finite or exploding energy."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class ConvergenceError(NumericalFailure):
    """An iteration hit its cap; carries the last estimate and gap."""

    def __init__(self, message: str, estimate: float, gap: float):
        super().__init__(f"{message}: estimate={estimate:.6e}, gap={gap:.3e}")
        self.estimate = estimate
        self.gap = gap
