"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class NumericError(ValueError):
    """A value is NaN/Inf where a finite number is required."""


class ConfigError(ValueError):
    """A configuration field is out of range or inconsistent."""


class ContractError(ValueError):
    """A caller violated an API precondition."""


class DataError(ValueError):
    """A sample or dataset is inconsistent with the configured schema."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during optimization."""

    def __init__(self, step: int, loss_value: float):
        self.step = step
        self.loss_value = loss_value
        super().__init__(f"non-finite loss {loss_value!r} at step {step}")
