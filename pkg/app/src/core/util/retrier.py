import logging
import time
from typing import Callable, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")


class Retrier:
    def __init__(
        self,
        max_attempts: int = 5,
        base_delay: float = 0.1,
        max_delay: float = 5.0,
        retry_on: tuple[type[BaseException], ...] = (OSError,),
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.max_attempts = max_attempts
        self.base_delay = base_delay
        self.max_delay = max_delay
        self.retry_on = retry_on
        self._sleep = sleep

    def execute(
        self,
        operation: Callable[[], T],
    ) -> T:
        last_error: BaseException | None = None

        for attempt in range(self.max_attempts):
            try:
                return operation()
            except self.retry_on as e:
                last_error = e
                if attempt == self.max_attempts - 1:
                    break

                delay = min(
                    self.base_delay * (2**attempt),
                    self.max_delay,
                )
                logger.debug(
                    "Retrying after transient failure",
                    extra={"attempt": attempt + 1, "delay_s": delay, "error": str(e)},
                )
                self._sleep(delay)

        if last_error is None:
            raise ValueError("max_attempts must be at least 1")
        raise last_error
