from .atomic_operations import AtomicFileOperations, file_checksum
from .run_lock import RunLock

__all__ = [
    "AtomicFileOperations",
    "RunLock",
    "file_checksum",
]
