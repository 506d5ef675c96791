"""Exception hierarchy.

The CLI maps these onto exit statuses: ``ConfigError`` -> 1,
``DataError`` -> 2, ``NumericError`` -> 3.
"""


class NodebiasError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(NodebiasError, ValueError):
    """Invalid configuration or usage."""


class DataError(NodebiasError, ValueError):
    """Malformed dataset, model file or input vector."""


class StructuralError(DataError):
    """Network dimensions do not line up."""


class InputError(DataError):
    """An input vector is unusable (wrong length, non-finite)."""


class ModelFileError(DataError):
    """A model file violates the schema."""


class BudgetExceededError(ConfigError):
    """An exhaustive check was requested over a grid larger than the budget."""


class NumericError(NodebiasError, ArithmeticError):
    """Numerical failure during training or evaluation."""


class TrainingDivergedError(NumericError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss!r})")
        self.epoch = epoch
        self.loss = loss
