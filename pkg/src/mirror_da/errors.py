class InvalidArgumentError(ValueError):
    """Raised when an operation receives inputs outside its contract."""


class ConsistencyError(RuntimeError):
    """Internal bookkeeping went out of sync (stale trace, bad index)."""


class NumericalFailure(FloatingPointError):
    """A loss or gradient became non-finite during training."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record or {}


class HiddenLabelError(AttributeError):
    """Target labels were requested through a training-side view."""
