"""Training objectives, staged recipes and the named presets."""

import logging
from dataclasses import dataclass, field, replace
from enum import StrEnum
from pathlib import Path

import numpy as np
import torch

from app.src.core.exceptions.data_exceptions import DatasetSpecError
from app.src.core.exceptions.model_exceptions import LabelModificationError
from app.src.core.exceptions.system_exceptions import ConfigurationError
from app.src.domain.attack import AttackConfig, InitMode, run_pgd_batch, sample_targets
from app.src.domain.datasets import (
    AugmentationConfig,
    Batch,
    Dataset,
    augment_images,
    batches,
)
from app.src.domain.model import (
    LabelDistribution,
    ModelAdapter,
    OptimizerConfig,
    TrainState,
    grad_params,
    label_matrix,
    one_hot_matrix,
    sgd_step,
)
from app.src.domain.repositories import CheckpointRepository
from app.src.domain.taxonomy import ClassTaxonomy, SemanticTargetSet
from app.src.domain.value_objects import ClassIndex

logger = logging.getLogger(__name__)

DEFAULT_DESK_FACTOR = 20
LABEL_MODIFICATION_WEIGHT = 0.5


class Objective(StrEnum):
    STANDARD = "standard"
    UNTARGETED_ADVERSARIAL = "untargeted_adversarial"
    SEMANTIC_TARGETED = "semantic_targeted"


class Scale(StrEnum):
    PAPER = "paper"
    DESK = "desk"


@dataclass(frozen=True)
class TrainingStage:
    objective: Objective
    epochs: int
    epsilon: float | None = None
    label_modification: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(setting=f"stage.epochs={self.epochs}")
        if self.objective == Objective.STANDARD:
            if self.epsilon is not None or self.label_modification:
                raise ConfigurationError(
                    setting="standard stages take no epsilon or label modification"
                )
            return
        if self.epsilon is None or not self.epsilon > 0:
            raise ConfigurationError(setting=f"stage.epsilon={self.epsilon}")
        if (
            self.label_modification
            and self.objective != Objective.SEMANTIC_TARGETED
        ):
            raise ConfigurationError(
                setting="label modification applies to semantic targeted stages only"
            )

    def describe(self) -> str:
        if self.objective == Objective.STANDARD:
            return f"standard x{self.epochs}"
        lm = ", LM" if self.label_modification else ""
        return f"{self.objective.value}(eps={self.epsilon}{lm}) x{self.epochs}"


@dataclass(frozen=True)
class TrainingHyperparameters:
    lr: float = 0.1
    batch_size: int = 100
    momentum: float = 0.9
    weight_decay: float = 5e-4
    augmentation: AugmentationConfig | None = field(default_factory=AugmentationConfig)
    attack_steps: int = 10
    attack_init: InitMode = "zero"
    checkpoint_every: int | None = None

    @property
    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(
            lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay
        )


@dataclass(frozen=True)
class Recipe:
    name: str
    stages: tuple[TrainingStage, ...]
    hyperparameters: TrainingHyperparameters = field(
        default_factory=TrainingHyperparameters
    )

    def __post_init__(self):
        if not self.stages:
            raise ConfigurationError(setting="recipe.stages must not be empty")

    @property
    def total_epochs(self) -> int:
        return sum(stage.epochs for stage in self.stages)


@dataclass(frozen=True)
class StepStats:
    loss: float
    correct: int
    size: int
    attacked: int = 0
    attack_successes: int = 0
    gradient_evaluations: int = 0


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    stage: int
    objective: Objective
    mean_loss: float
    train_acc: float
    attack_success_rate: float | None
    gradient_evaluations: int


@dataclass
class RecipeResult:
    state: TrainState
    log: list[EpochLog]
    checkpoints: list[Path]


_FULL_LENGTH_PRESETS: dict[str, tuple[TrainingStage, ...]] = {
    "Standard": (TrainingStage(Objective.STANDARD, 200),),
    "AdvRobust": (TrainingStage(Objective.UNTARGETED_ADVERSARIAL, 200, epsilon=1.0),),
    "LE-SmT": (TrainingStage(Objective.SEMANTIC_TARGETED, 200, epsilon=1.0),),
    "HE-SmT": (TrainingStage(Objective.SEMANTIC_TARGETED, 200, epsilon=2.5),),
    "HE-SmT-LM": (
        TrainingStage(
            Objective.SEMANTIC_TARGETED, 300, epsilon=2.5, label_modification=True
        ),
    ),
    "ST": (
        TrainingStage(
            Objective.SEMANTIC_TARGETED, 200, epsilon=2.5, label_modification=True
        ),
        TrainingStage(Objective.STANDARD, 100),
    ),
}

PRESET_NAMES = tuple(_FULL_LENGTH_PRESETS)


def preset(
    name: str,
    scale: Scale | str = Scale.PAPER,
    desk_factor: int = DEFAULT_DESK_FACTOR,
    hyperparameters: TrainingHyperparameters | None = None,
) -> Recipe:
    if name not in _FULL_LENGTH_PRESETS:
        raise ConfigurationError(
            setting=f"recipe.preset={name!r}",
            detail=f"Known presets: {', '.join(PRESET_NAMES)}",
        )
    stages = _FULL_LENGTH_PRESETS[name]
    if Scale(scale) == Scale.DESK:
        if desk_factor < 1:
            raise ConfigurationError(setting=f"desk_factor={desk_factor}")
        stages = tuple(
            replace(stage, epochs=max(1, stage.epochs // desk_factor))
            for stage in stages
        )
    return Recipe(
        name=name,
        stages=stages,
        hyperparameters=hyperparameters or TrainingHyperparameters(),
    )


def make_label(
    y: ClassIndex,
    t: ClassIndex | None,
    label_modification: bool,
    num_classes: int,
) -> LabelDistribution:
    weights = np.zeros(num_classes)
    if not label_modification or t is None:
        weights[y] = 1.0
        return LabelDistribution(weights)
    if t == y:
        raise LabelModificationError(true_class=y, target_class=t)
    weights[y] = LABEL_MODIFICATION_WEIGHT
    weights[t] = LABEL_MODIFICATION_WEIGHT
    return LabelDistribution(weights)


def train_step(
    state: TrainState,
    batch: Batch,
    stage: TrainingStage,
    targets: SemanticTargetSet | None,
    rng: np.random.Generator | None = None,
    attack_steps: int = 10,
    attack_init: InitMode = "zero",
) -> tuple[TrainState, StepStats]:
    model = state.model
    rng = rng or state.rng
    labels = batch.fine_labels
    images: np.ndarray | torch.Tensor = batch.images
    num_classes = model.num_classes
    attacked = successes = evaluations = 0

    if stage.objective == Objective.STANDARD:
        soft_labels = one_hot_matrix(labels, num_classes)
    elif stage.objective == Objective.UNTARGETED_ADVERSARIAL:
        cfg = AttackConfig(
            epsilon=float(stage.epsilon),  # type: ignore[arg-type]
            steps=attack_steps,
            mode="untargeted",
            init=attack_init,
        )
        result = run_pgd_batch(model, images, labels, cfg, rng=rng)
        images = result.adversarial_images
        soft_labels = one_hot_matrix(labels, num_classes)
        attacked, successes = len(result), int(result.success.sum())
        evaluations = result.gradient_evaluations
    else:
        if targets is None:
            raise ConfigurationError(
                setting="semantic targeted training requires target sets"
            )
        chosen = sample_targets(labels, targets, rng)
        cfg = AttackConfig(
            epsilon=float(stage.epsilon),  # type: ignore[arg-type]
            steps=attack_steps,
            mode="targeted",
            init=attack_init,
        )
        result = run_pgd_batch(model, images, labels, cfg, targets=chosen, rng=rng)
        # unsuccessful attacks still feed training
        images = result.adversarial_images
        soft_labels = label_matrix(
            [
                make_label(int(y), int(t), stage.label_modification, num_classes)
                for y, t in zip(labels, chosen, strict=True)
            ]
        )
        attacked, successes = len(result), int(result.success.sum())
        evaluations = result.gradient_evaluations

    outcome = grad_params(model, images, soft_labels)
    sgd_step(state, outcome.grads)
    predictions = np.argmax(outcome.logits.cpu().numpy(), axis=1)

    return state, StepStats(
        loss=float(outcome.loss),
        correct=int((predictions == labels).sum()),
        size=len(batch),
        attacked=attacked,
        attack_successes=successes,
        gradient_evaluations=evaluations,
    )


def _check_consistency(
    dataset: Dataset,
    taxonomy: ClassTaxonomy,
    targets: SemanticTargetSet | None,
    model: ModelAdapter,
) -> None:
    if dataset.num_fine != taxonomy.num_fine:
        raise DatasetSpecError(
            message=f"Dataset has {dataset.num_fine} classes, taxonomy "
            f"{taxonomy.num_fine}"
        )
    if model.num_classes != taxonomy.num_fine:
        raise DatasetSpecError(
            message=f"Model predicts {model.num_classes} classes, taxonomy "
            f"{taxonomy.num_fine}"
        )
    if targets is not None and len(targets.targets) != taxonomy.num_fine:
        raise DatasetSpecError(message="Target sets do not cover the taxonomy")


def run_recipe(
    recipe: Recipe,
    dataset: Dataset,
    taxonomy: ClassTaxonomy,
    targets: SemanticTargetSet | None,
    seed: int,
    model: ModelAdapter,
    checkpoints: CheckpointRepository | None = None,
) -> RecipeResult:
    """Run every stage in order, carrying parameters across stage boundaries."""
    _check_consistency(dataset, taxonomy, targets, model)
    hyper = recipe.hyperparameters
    state = TrainState(
        model=model,
        optimizer_config=hyper.optimizer,
        rng=np.random.default_rng(seed),
    )
    log: list[EpochLog] = []
    written: list[Path] = []

    for stage_index, stage in enumerate(recipe.stages):
        state.reset_momentum()
        logger.info(
            "Starting stage",
            extra={"recipe": recipe.name, "stage": stage_index, "plan": stage.describe()},
        )
        for _ in range(stage.epochs):
            entry = _run_epoch(state, dataset, stage, stage_index, targets, hyper)
            log.append(entry)
            logger.info(
                "Epoch finished",
                extra={
                    "epoch": entry.epoch,
                    "stage": stage_index,
                    "loss": f"{entry.mean_loss:.4f}",
                    "acc": f"{entry.train_acc:.4f}",
                    "attack_success": entry.attack_success_rate,
                },
            )
            periodic = (
                hyper.checkpoint_every is not None
                and state.epoch % hyper.checkpoint_every == 0
            )
            if checkpoints is not None and periodic:
                written.append(
                    checkpoints.save_checkpoint(state, f"epoch-{state.epoch:04d}")
                )

        boundary_name = f"epoch-{state.epoch:04d}"
        if checkpoints is not None and (
            not written or written[-1].stem != boundary_name
        ):
            written.append(checkpoints.save_checkpoint(state, boundary_name))

    return RecipeResult(state=state, log=log, checkpoints=written)


def _run_epoch(
    state: TrainState,
    dataset: Dataset,
    stage: TrainingStage,
    stage_index: int,
    targets: SemanticTargetSet | None,
    hyper: TrainingHyperparameters,
) -> EpochLog:
    shuffle_seed = int(state.rng.integers(2**63 - 1))
    loss_sum = 0.0
    correct = seen = attacked = successes = evaluations = 0

    for batch in batches(dataset, hyper.batch_size, shuffle_seed=shuffle_seed):
        if hyper.augmentation is not None:
            batch = Batch(
                indices=batch.indices,
                images=augment_images(batch.images, hyper.augmentation, state.rng),
                fine_labels=batch.fine_labels,
                coarse_labels=batch.coarse_labels,
            )
        _, stats = train_step(
            state,
            batch,
            stage,
            targets,
            attack_steps=hyper.attack_steps,
            attack_init=hyper.attack_init,
        )
        loss_sum += stats.loss * stats.size
        correct += stats.correct
        seen += stats.size
        attacked += stats.attacked
        successes += stats.attack_successes
        evaluations += stats.gradient_evaluations

    state.epoch += 1
    return EpochLog(
        epoch=state.epoch,
        stage=stage_index,
        objective=stage.objective,
        mean_loss=loss_sum / max(seen, 1),
        train_acc=correct / max(seen, 1),
        attack_success_rate=(successes / attacked) if attacked else None,
        gradient_evaluations=evaluations,
    )
