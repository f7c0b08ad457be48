from pathlib import Path
from typing import Protocol

from app.src.domain.model import TrainState


class CheckpointRepository(Protocol):
    """Persistence interface for training checkpoints."""

    def save_checkpoint(self, state: TrainState, name: str) -> Path:
        """Persist parameters, optimizer slots and rng state under ``name``."""
        ...

    def checksum(self, path: Path) -> str:
        """Checksum of the parameter payload of a stored checkpoint."""
        ...
