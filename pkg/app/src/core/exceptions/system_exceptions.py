from app.src.core.exceptions.base_exceptions import EXIT_USAGE, BaseSevTrainException


class BaseSystemException(BaseSevTrainException):
    pass


class ConfigurationError(BaseSystemException):
    def __init__(
        self,
        message: str | None = None,
        setting: str | None = None,
        detail: str | None = None,
        original_error: Exception | None = None,
    ):
        if message is None and setting:
            message = f"Configuration error: {setting}"
        elif message is None:
            message = "Run configuration is invalid"

        if detail is None:
            detail = "Check the run configuration file and command-line flags"

        super().__init__(
            message,
            exit_code=EXIT_USAGE,
            detail=detail,
            original_error=original_error,
        )
        self.setting = setting


class RunDirectoryError(BaseSystemException):
    def __init__(
        self,
        message: str | None = None,
        path: str | None = None,
        operation: str | None = None,
        original_error: Exception | None = None,
    ):
        if message is None and path and operation:
            message = f"Unable to {operation} run directory {path}"
        elif message is None:
            message = "Run directory operation failed"

        super().__init__(
            message,
            detail="Only one command may write to a run directory at a time",
            original_error=original_error,
        )
        self.path = path
        self.operation = operation


class GridMismatchError(BaseSystemException):
    def __init__(
        self,
        message: str | None = None,
        missing: dict[str, list[str]] | None = None,
    ):
        missing = missing or {}
        if message is None and missing:
            parts = [f"{name}: {', '.join(conds)}" for name, conds in missing.items()]
            message = "Evaluation grids differ; missing conditions -> " + "; ".join(
                parts
            )
        elif message is None:
            message = "Evaluation grids differ across models"

        super().__init__(
            message,
            exit_code=EXIT_USAGE,
            detail="Evaluate every model on the same epsilon grid and corruption specs",
        )
        self.missing = missing
