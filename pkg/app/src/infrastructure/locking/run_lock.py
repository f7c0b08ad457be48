import fcntl
import logging
from collections.abc import Generator
from contextlib import contextmanager
from pathlib import Path
from typing import BinaryIO

from app.src.core.exceptions.system_exceptions import RunDirectoryError
from app.src.core.util.retrier import Retrier

logger = logging.getLogger(__name__)

LOCK_NAME = ".run.lock"


class RunLock:
    """Single-writer guard for a run directory, backed by a non-blocking flock."""

    def __init__(
        self,
        run_dir: Path,
        max_attempts: int = 5,
        base_delay: float = 0.2,
    ):
        self.run_dir = run_dir
        self.lock_path = run_dir / LOCK_NAME
        self.retrier = Retrier(max_attempts, base_delay, retry_on=(BlockingIOError,))

    @contextmanager
    def hold(self) -> Generator[Path, None, None]:
        self.run_dir.mkdir(parents=True, exist_ok=True)

        with open(self.lock_path, "wb") as lock_handle:
            try:
                self.retrier.execute(lambda: self._lock(lock_handle))
            except BlockingIOError as e:
                raise RunDirectoryError(
                    message=f"Run directory {self.run_dir} is in use by another command",
                    path=str(self.run_dir),
                    operation="lock",
                    original_error=e,
                ) from e
            logger.debug("Acquired run lock", extra={"run_dir": str(self.run_dir)})
            try:
                yield self.run_dir
            finally:
                self._release_and_cleanup(lock_handle)

    def _lock(self, lock_handle: BinaryIO) -> None:
        fcntl.flock(lock_handle.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)

    def _release_and_cleanup(self, lock_handle: BinaryIO) -> None:
        try:
            fcntl.flock(lock_handle.fileno(), fcntl.LOCK_UN)
        except OSError:
            logger.warning("Failed to release run lock cleanly", extra={"path": str(self.lock_path)})

        try:
            self.lock_path.unlink(missing_ok=True)
        except OSError:
            logger.warning("Failed to clean up run lock", extra={"path": str(self.lock_path)})
