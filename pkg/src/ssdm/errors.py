class DimensionError(ValueError):
    """Operand shapes do not agree."""


class ValidationError(ValueError):
    """An input violates a documented precondition."""


class ConfigError(ValueError):
    """A run or model configuration is invalid or incomplete."""


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, lr: float, grad_norm: float, loss: float):
        self.step = step
        self.lr = lr
        self.grad_norm = grad_norm
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at step {step} (lr={lr:g}, grad_norm={grad_norm:g})"
        )
