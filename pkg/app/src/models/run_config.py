import json
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.src.core.exceptions.system_exceptions import ConfigurationError
from app.src.domain.corruption import SEVERITIES, CorruptionKind
from app.src.domain.metrics import DEFAULT_EPSILONS
from app.src.domain.objectives import PRESET_NAMES, Objective, Scale

MAX_SEED = 2**64 - 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SyntheticDataConfig(_Strict):
    seed: int = Field(0, ge=0, description="Data seed, independent of the training seed")
    num_classes: int = Field(10, ge=2, description="Fine classes in the generated hierarchy")
    train_per_class: int = Field(50, ge=1)
    test_per_class: int = Field(10, ge=1)
    image_size: int = Field(32, ge=4, multiple_of=4)
    noise: float = Field(0.08, ge=0)
    amplitude: float = Field(0.12, gt=0)


class DatasetConfig(_Strict):
    kind: Literal["synthetic", "cifar100", "files"] = "synthetic"
    train_path: Path | None = Field(None, description="CIFAR-100 train.bin or a gen-data manifest")
    test_path: Path | None = Field(None, description="CIFAR-100 test.bin or a gen-data manifest")
    synthetic: SyntheticDataConfig = Field(default_factory=SyntheticDataConfig)
    fine_subset: list[int] | None = Field(
        None, description="Restrict CIFAR-100 to these fine classes (original indices)"
    )
    eval_limit: int | None = Field(None, ge=1, description="Evaluate the first N test samples")

    @model_validator(mode="after")
    def _cifar_needs_paths(self) -> "DatasetConfig":
        if self.kind != "synthetic" and (self.train_path is None or self.test_path is None):
            raise ValueError(f"{self.kind} datasets need both train_path and test_path")
        if self.fine_subset is not None and len(set(self.fine_subset)) < 2:
            raise ValueError("fine_subset needs at least two distinct classes")
        return self


class StageConfig(_Strict):
    objective: Objective
    epochs: int = Field(..., ge=1)
    epsilon: float | None = Field(None, gt=0)
    label_modification: bool = False


class RecipeConfig(_Strict):
    preset: str | None = Field("Standard", description=f"One of {', '.join(PRESET_NAMES)}")
    scale: Scale = Scale.DESK
    stages: list[StageConfig] | None = None
    name: str | None = None

    @model_validator(mode="after")
    def _preset_or_stages(self) -> "RecipeConfig":
        if self.stages is not None:
            if not self.stages:
                raise ValueError("stages must not be empty")
            self.preset = None
        elif self.preset is None:
            raise ValueError("either preset or stages is required")
        elif self.preset not in PRESET_NAMES:
            raise ValueError(f"unknown preset {self.preset!r}")
        return self

    @property
    def display_name(self) -> str:
        return self.name or self.preset or "custom"


class AugmentationSettings(_Strict):
    enabled: bool = True
    crop_padding: int = Field(4, ge=0)
    hflip_probability: float = Field(0.5, ge=0, le=1)


class TrainingConfig(_Strict):
    lr: float = Field(0.1, gt=0)
    batch_size: int = Field(100, ge=1)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(5e-4, ge=0)
    augmentation: AugmentationSettings = Field(default_factory=AugmentationSettings)
    checkpoint_every: int | None = Field(None, ge=1)
    target_k: int = Field(5, ge=1)
    attack_steps: int = Field(10, ge=1)
    attack_init: Literal["zero", "random"] = "zero"


class AttackGridConfig(_Strict):
    epsilons: list[float] = Field(default_factory=lambda: list(DEFAULT_EPSILONS))
    steps: int = Field(10, ge=1)
    init: Literal["zero", "random"] = "zero"

    @model_validator(mode="after")
    def _ascending_from_zero(self) -> "AttackGridConfig":
        if not self.epsilons or self.epsilons[0] != 0:
            raise ValueError("epsilons must start at 0 (the clean baseline)")
        if any(b <= a for a, b in zip(self.epsilons, self.epsilons[1:])):
            raise ValueError("epsilons must be strictly ascending")
        return self


class CorruptionConfig(_Strict):
    kinds: list[CorruptionKind] = Field(default_factory=lambda: list(CorruptionKind))
    severities: list[int] = Field(default_factory=lambda: list(SEVERITIES))
    seed: int = Field(0, ge=0)
    precomputed: list[Path] = Field(
        default_factory=list, description="Manifests of externally generated corrupted sets"
    )
    parameters: Path | None = Field(None, description="Override the shipped parameter tables")

    @model_validator(mode="after")
    def _known_severities(self) -> "CorruptionConfig":
        bad = [s for s in self.severities if s not in SEVERITIES]
        if bad:
            raise ValueError(f"severities must be within 1..5, got {bad}")
        return self


class RunConfig(_Strict):
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    taxonomy: Path | None = Field(None, description="Hierarchy JSON; required unless the dataset is synthetic")
    recipe: RecipeConfig = Field(default_factory=RecipeConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    attack: AttackGridConfig = Field(default_factory=AttackGridConfig)
    corruption: CorruptionConfig = Field(default_factory=CorruptionConfig)
    seed: int = Field(0, ge=0, le=MAX_SEED)
    output_dir: Path = Path("runs/default")

    @model_validator(mode="after")
    def _taxonomy_for_cifar(self) -> "RunConfig":
        if self.dataset.kind != "synthetic" and self.taxonomy is None:
            raise ValueError("taxonomy is required unless the dataset is synthetic")
        return self

    def resolved(self) -> dict[str, Any]:
        return self.model_dump(mode="json")


class RunManifest(BaseModel):
    """Everything needed to re-run one command; written before any result."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    command: str
    config: dict[str, Any]
    decisions: dict[str, Any]
    code_version: str
    inputs: dict[str, str] = Field(
        default_factory=dict, description="Checksums of checkpoints and data read"
    )


def _field_path(error: dict[str, Any]) -> str:
    location = ".".join(str(part) for part in error.get("loc", ()))
    return location or _MODEL_LEVEL_FIELDS.get(error.get("msg", ""), "config")


# model-level validators report an empty location; map their messages to fields
_MODEL_LEVEL_FIELDS: dict[str, str] = {
    "Value error, taxonomy is required unless the dataset is synthetic": "taxonomy",
}


def parse_run_config(document: Any, source: str = "<config>") -> RunConfig:
    try:
        return RunConfig.model_validate(document)
    except ValidationError as e:
        first = e.errors()[0]
        field = _field_path(first)
        raise ConfigurationError(
            message=f"Invalid run configuration {source}: {field}: {first['msg']}",
            setting=field,
            detail=f"{e.error_count()} validation error(s)",
            original_error=e,
        ) from e


def load_run_config(path: Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(
            message=f"Unable to read run configuration {path}",
            setting="--config",
            original_error=e,
        ) from e
    return parse_run_config(document, source=str(path))


def apply_overrides(
    config: RunConfig,
    seed: int | None = None,
    preset: str | None = None,
    scale: str | None = None,
    output_dir: Path | None = None,
) -> RunConfig:
    """Command-line flags take precedence over the file; the result is re-validated."""
    document = config.model_dump(mode="json")
    if seed is not None:
        document["seed"] = seed
    if preset is not None:
        document["recipe"]["preset"] = preset
        document["recipe"]["stages"] = None
    if scale is not None:
        document["recipe"]["scale"] = scale
    if output_dir is not None:
        document["output_dir"] = str(output_dir)
    return parse_run_config(document, source="<command line>")
