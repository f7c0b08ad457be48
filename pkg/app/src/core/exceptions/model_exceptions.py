from app.src.core.exceptions.base_exceptions import EXIT_USAGE, BaseSevTrainException


class BaseModelException(BaseSevTrainException):
    pass


class ShapeMismatchError(BaseModelException):
    def __init__(
        self,
        message: str | None = None,
        expected: tuple | None = None,
        actual: tuple | None = None,
    ):
        if message is None and expected is not None and actual is not None:
            message = f"Input shape {actual} does not match expected {expected}"
        elif message is None:
            message = "Tensor shapes do not agree"

        super().__init__(message)
        self.expected = expected
        self.actual = actual


class NonFiniteError(BaseModelException):
    def __init__(
        self,
        message: str | None = None,
        layer: str | None = None,
    ):
        if message is None and layer:
            message = f"Non-finite values produced by layer '{layer}'"
        elif message is None:
            message = "Non-finite values encountered"

        super().__init__(
            message,
            detail="Lower the learning rate or check the input pipeline",
        )
        self.layer = layer


class CheckpointError(BaseModelException):
    def __init__(
        self,
        message: str | None = None,
        operation: str | None = None,
        path: str | None = None,
        original_error: Exception | None = None,
    ):
        if message is None and operation and path:
            message = f"Unable to {operation} checkpoint at {path}"
        elif message is None:
            message = "Checkpoint operation failed"

        super().__init__(
            message,
            detail="Check the path, disk space and that the architecture matches",
            original_error=original_error,
        )
        self.operation = operation
        self.path = path


class AttackPreconditionError(BaseModelException):
    def __init__(
        self,
        message: str | None = None,
        field: str | None = None,
        value: object = None,
    ):
        if message is None and field:
            message = f"Invalid attack parameter {field}={value!r}"
        elif message is None:
            message = "Attack preconditions not met"

        super().__init__(message, exit_code=EXIT_USAGE)
        self.field = field
        self.value = value


class AttackDivergedError(BaseModelException):
    def __init__(
        self,
        message: str | None = None,
        step: int | None = None,
        loss_trace: list[float] | None = None,
    ):
        if message is None and step is not None:
            message = f"Attack loss became non-finite at step {step}"
        elif message is None:
            message = "Attack loss became non-finite"

        super().__init__(message)
        self.step = step
        self.loss_trace = loss_trace or []


class LabelModificationError(BaseModelException):
    def __init__(
        self,
        message: str | None = None,
        true_class: int | None = None,
        target_class: int | None = None,
    ):
        if message is None and true_class is not None:
            message = (
                f"Label modification needs a target different from the true class "
                f"(y={true_class}, t={target_class})"
            )
        elif message is None:
            message = "Invalid label modification"

        super().__init__(message)
        self.true_class = true_class
        self.target_class = target_class
