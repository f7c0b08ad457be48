from functools import lru_cache
from pathlib import Path

from app.src.application.experiment_service import ExperimentService
from app.src.core.config import get_settings
from app.src.domain.corruption import CorruptionTable
from app.src.infrastructure.corruption_config import get_corruption_table
from app.src.infrastructure.git.code_version import CodeVersion
from app.src.infrastructure.locking.atomic_operations import AtomicFileOperations

PROJECT_ROOT = Path(__file__).resolve().parents[3]


@lru_cache
def get_atomic_operations() -> AtomicFileOperations:
    return AtomicFileOperations()


@lru_cache
def get_code_version() -> CodeVersion:
    return CodeVersion(PROJECT_ROOT)


def get_default_corruption_table() -> CorruptionTable:
    return get_corruption_table()


def get_experiment_service() -> ExperimentService:
    return ExperimentService(
        settings=get_settings(),
        code_version=get_code_version(),
        corruption_table=get_default_corruption_table(),
        atomic_ops=get_atomic_operations(),
    )
