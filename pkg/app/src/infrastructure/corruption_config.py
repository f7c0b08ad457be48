import os
from functools import lru_cache
from pathlib import Path

import yaml

from app.src.core.exceptions.data_exceptions import CorruptionSpecError
from app.src.domain.corruption import CorruptionTable


def get_config(path: Path | None = None) -> dict:
    if path is None:
        script_dir = os.path.dirname(os.path.abspath(__file__))
        path = Path(script_dir) / "corruption_settings.yaml"
    try:
        with open(path) as f:
            return yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise CorruptionSpecError(
            message=f"Unable to read corruption parameters from {path}"
        ) from e


@lru_cache
def get_corruption_table() -> CorruptionTable:
    return CorruptionTable.from_mapping(get_config())


def load_corruption_table(path: Path) -> CorruptionTable:
    return CorruptionTable.from_mapping(get_config(path))
