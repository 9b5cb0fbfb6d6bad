"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated an operation's precondition (shape, range, arity)."""


class NumericError(ArithmeticError):
    """A forward computation produced NaN."""

    def __init__(self, primitive: str, message: str | None = None):
        self.primitive = primitive
        super().__init__(message or f"NaN produced by primitive '{primitive}'")


class TrainingError(RuntimeError):
    """Training diverged. ``last_state`` holds the last finite parameters."""

    def __init__(self, message: str, last_state=None, step: int | None = None):
        super().__init__(message)
        self.last_state = last_state
        self.step = step
