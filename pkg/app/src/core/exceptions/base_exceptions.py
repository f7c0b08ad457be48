EXIT_SUCCESS = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class BaseSevTrainException(Exception):
    def __init__(
        self,
        message: str,
        exit_code: int = EXIT_RUNTIME,
        detail: str | None = None,
        original_error: Exception | None = None,
    ):
        self.message = message
        self.exit_code = exit_code
        self.detail = detail

        if original_error:
            self.__cause__ = original_error

        super().__init__(self.message)
