import hashlib
import logging
import os
import tempfile
from collections.abc import Generator
from contextlib import contextmanager
from pathlib import Path

from app.src.core.exceptions.system_exceptions import RunDirectoryError

logger = logging.getLogger(__name__)


class AtomicFileOperations:
    """Temp-file-then-rename writes so readers never observe a partial artifact."""

    @contextmanager
    def atomic_write(self, target_path: Path) -> Generator[Path, None, None]:
        target_path.parent.mkdir(parents=True, exist_ok=True)
        temp_path = self._create_temp_file(target_path)

        try:
            yield temp_path
            self._commit_write(temp_path, target_path)
        except Exception:
            self._cleanup_temp_file(temp_path)
            raise

    def write_bytes(self, target_path: Path, data: bytes) -> str:
        """Write ``data`` atomically and return its sha256."""
        try:
            with self.atomic_write(target_path) as temp_path:
                temp_path.write_bytes(data)
        except OSError as e:
            raise RunDirectoryError(
                path=str(target_path), operation="write", original_error=e
            ) from e
        logger.debug("Wrote artifact", extra={"path": str(target_path), "bytes": len(data)})
        return hashlib.sha256(data).hexdigest()

    def write_text(self, target_path: Path, text: str) -> str:
        return self.write_bytes(target_path, text.encode("utf-8"))

    def _create_temp_file(self, target_path: Path) -> Path:
        temp_fd, temp_path_str = tempfile.mkstemp(
            dir=target_path.parent,
            prefix=f".tmp_{target_path.name}_",
        )
        os.close(temp_fd)
        return Path(temp_path_str)

    def _commit_write(self, temp_path: Path, target_path: Path) -> None:
        temp_path.replace(target_path)

    def _cleanup_temp_file(self, temp_path: Path) -> None:
        temp_path.unlink(missing_ok=True)


def file_checksum(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()
