import json
import logging
import sys
from typing import Any, TextIO

from app.src.core.config import get_settings
from app.src.core.exceptions.base_exceptions import EXIT_RUNTIME, BaseSevTrainException

logger = logging.getLogger(__name__)


def create_error_payload(exc: BaseException) -> dict[str, Any]:
    if isinstance(exc, BaseSevTrainException):
        payload: dict[str, Any] = {
            "error": exc.message,
            "type": type(exc).__name__,
            "exit_code": exc.exit_code,
        }
        if exc.detail:
            payload["detail"] = exc.detail
    else:
        payload = {
            "error": "Internal error",
            "type": type(exc).__name__,
            "exit_code": EXIT_RUNTIME,
            "detail": str(exc),
        }

    if get_settings().environment == "development" and exc.__cause__:
        payload["original_error"] = {
            "type": type(exc.__cause__).__name__,
            "message": str(exc.__cause__),
        }

    return payload


def handle_cli_exception(exc: BaseException, stream: TextIO | None = None) -> int:
    """Log the failure and emit one JSON error line on the diagnostic stream."""
    payload = create_error_payload(exc)

    if isinstance(exc, BaseSevTrainException):
        logger.warning(
            f"Command failed: {exc.message}",
            extra={"exception_type": type(exc).__name__, "exit_code": exc.exit_code},
            exc_info=exc if logger.isEnabledFor(logging.DEBUG) else None,
        )
    else:
        logger.error(
            "Unhandled exception occurred",
            extra={"exception_type": type(exc).__name__},
            exc_info=exc,
        )

    out = stream or sys.stderr
    out.write(json.dumps(payload, sort_keys=True) + "\n")
    out.flush()
    return int(payload["exit_code"])
