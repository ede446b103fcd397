"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes disagree with an operation's contract."""


class ContractError(ValueError):
    """A precondition on arguments or configuration is violated."""


class NumericFaultError(ArithmeticError):
    """A NaN surfaced where a finite value is required; the message names
    the offending gate, layer, or buffer."""


class DivergenceError(ArithmeticError):
    """The explicit integrator blew up; the message names the step."""


class FormatError(ValueError):
    """A serialized artifact (checkpoint, trajectory, mesh) is malformed."""


class TrainingDivergedError(RuntimeError):
    """Training hit a non-finite loss. Carries the epoch index and the last
    checkpoint taken before divergence (may be None if none was taken)."""

    def __init__(self, message: str, epoch: int, last_checkpoint=None):
        super().__init__(message)
        self.epoch = epoch
        self.last_checkpoint = last_checkpoint
