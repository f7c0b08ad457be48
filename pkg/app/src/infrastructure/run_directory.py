import json
import logging
from collections.abc import Mapping
from pathlib import Path

from app.src.core.exceptions.system_exceptions import RunDirectoryError
from app.src.infrastructure.locking.atomic_operations import AtomicFileOperations
from app.src.models.run_config import RunManifest

logger = logging.getLogger(__name__)

ARTIFACT_INDEX = "artifacts.json"


class RunDirectory:
    """Manifest-first bookkeeping for one output directory.

    A command's manifest is written before any of its results and may only be
    rewritten with identical content. Output checksums go to a separate index,
    written after the results.
    """

    def __init__(self, path: Path, atomic_ops: AtomicFileOperations | None = None):
        self.path = path
        self.atomic_ops = atomic_ops or AtomicFileOperations()

    def manifest_path(self, command: str) -> Path:
        return self.path / f"manifest-{command}.json"

    def write_manifest(self, manifest: RunManifest) -> Path:
        target = self.manifest_path(manifest.command)
        text = json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
        if target.exists():
            if target.read_text(encoding="utf-8") != text:
                raise RunDirectoryError(
                    message=f"{target} already describes a different run; "
                    "use a fresh output directory",
                    path=str(self.path),
                    operation="rewrite manifest in",
                )
            logger.info("Manifest unchanged, re-running", extra={"path": str(target)})
            return target
        self.atomic_ops.write_text(target, text)
        logger.info("Manifest written", extra={"path": str(target)})
        return target

    def read_manifest(self, command: str) -> RunManifest:
        target = self.manifest_path(command)
        try:
            return RunManifest.model_validate_json(target.read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            raise RunDirectoryError(
                path=str(self.path), operation="read manifest from", original_error=e
            ) from e

    def record_artifacts(self, command: str, checksums: Mapping[str, str]) -> Path:
        index_path = self.path / ARTIFACT_INDEX
        index: dict[str, dict[str, str]] = {}
        if index_path.exists():
            try:
                index = json.loads(index_path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as e:
                raise RunDirectoryError(
                    path=str(self.path), operation="read artifact index of", original_error=e
                ) from e
        index[command] = dict(sorted(checksums.items()))
        self.atomic_ops.write_text(
            index_path, json.dumps(index, indent=2, sort_keys=True) + "\n"
        )
        return index_path
