class MldggError(Exception):
    """Base class for every error raised by the package"""


class ValidationError(MldggError, ValueError):
    """Invalid input, file or configuration"""


class ShapeError(ValidationError):
    """Tensor shapes do not line up"""


class CheckpointError(ValidationError):
    """Checkpoint file does not match the model it is loaded into"""


class NumericsError(MldggError, ArithmeticError):
    """A numerical routine was asked for something it cannot compute"""


class DivergenceError(NumericsError):
    """A training loss became NaN or infinite"""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class StaleCacheError(MldggError, RuntimeError):
    """A cached forward state no longer matches its parameters"""
