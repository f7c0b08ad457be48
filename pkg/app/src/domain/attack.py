"""L2-constrained projected gradient descent, untargeted and targeted."""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
import torch

from app.src.core.exceptions.model_exceptions import (
    AttackDivergedError,
    AttackPreconditionError,
    NonFiniteError,
)
from app.src.core.exceptions.taxonomy_exceptions import TargetSetError
from app.src.domain.datasets import Sample
from app.src.domain.model import ModelAdapter, cross_entropy, one_hot_matrix
from app.src.domain.taxonomy import SemanticTargetSet
from app.src.domain.value_objects import ClassIndex

logger = logging.getLogger(__name__)

AttackMode = Literal["untargeted", "targeted"]
InitMode = Literal["zero", "random"]

DEFAULT_STEPS = 10
STEP_SIZE_FACTOR = 2.5


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    steps: int = DEFAULT_STEPS
    step_size: float | None = None
    mode: AttackMode = "untargeted"
    target: ClassIndex | None = None
    init: InitMode = "zero"
    clamp: tuple[float, float] = (0.0, 1.0)
    norm: Literal["l2"] = "l2"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise AttackPreconditionError(field="epsilon", value=self.epsilon)
        if self.steps < 1:
            raise AttackPreconditionError(field="steps", value=self.steps)
        if self.step_size is None:
            object.__setattr__(
                self, "step_size", STEP_SIZE_FACTOR * self.epsilon / self.steps
            )
        if not self.step_size > 0:
            raise AttackPreconditionError(field="step_size", value=self.step_size)
        if self.mode not in ("untargeted", "targeted"):
            raise AttackPreconditionError(field="mode", value=self.mode)
        if self.init not in ("zero", "random"):
            raise AttackPreconditionError(field="init", value=self.init)
        if self.norm != "l2":
            raise AttackPreconditionError(field="norm", value=self.norm)

    @property
    def alpha(self) -> float:
        return float(self.step_size)  # type: ignore[arg-type]


@dataclass(frozen=True, eq=False)
class PerturbationResult:
    delta: torch.Tensor
    adversarial_image: torch.Tensor
    success: bool
    loss_trace: list[float]
    final_loss: float
    pred_class: int
    stalled_steps: int


@dataclass(frozen=True, eq=False)
class BatchPerturbationResult:
    delta: torch.Tensor
    adversarial_images: torch.Tensor
    success: np.ndarray
    loss_trace: np.ndarray
    final_loss: np.ndarray
    predictions: np.ndarray
    stalled_steps: np.ndarray
    gradient_evaluations: int

    def __len__(self) -> int:
        return int(self.delta.shape[0])

    def item(self, index: int) -> PerturbationResult:
        return PerturbationResult(
            delta=self.delta[index],
            adversarial_image=self.adversarial_images[index],
            success=bool(self.success[index]),
            loss_trace=[float(v) for v in self.loss_trace[:, index]],
            final_loss=float(self.final_loss[index]),
            pred_class=int(self.predictions[index]),
            stalled_steps=int(self.stalled_steps[index]),
        )


def _flat_norms(tensor: torch.Tensor) -> torch.Tensor:
    return tensor.reshape(tensor.shape[0], -1).norm(p=2, dim=1)


def _per_sample(values: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    return values.view(-1, *([1] * (like.ndim - 1)))


def _project_batch(delta: torch.Tensor, epsilon: float) -> torch.Tensor:
    norms = _flat_norms(delta)
    factors = torch.where(
        norms > epsilon, epsilon / norms.clamp_min(1e-30), torch.ones_like(norms)
    )
    return delta * _per_sample(factors, delta)


def project_l2(delta: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Radial projection of one perturbation onto the L2 ball of radius epsilon."""
    if not epsilon > 0:
        raise AttackPreconditionError(field="epsilon", value=epsilon)
    return _project_batch(delta.unsqueeze(0), epsilon)[0]


def _step_batch(
    x: torch.Tensor,
    delta: torch.Tensor,
    grad: torch.Tensor,
    cfg: AttackConfig,
) -> tuple[torch.Tensor, torch.Tensor]:
    grad_norms = _flat_norms(grad)
    stalled = grad_norms == 0
    direction = grad / _per_sample(torch.where(stalled, 1.0, grad_norms), grad)
    sign = 1.0 if cfg.mode == "untargeted" else -1.0
    moved = delta + sign * cfg.alpha * direction
    moved = _project_batch(moved, cfg.epsilon)
    low, high = cfg.clamp
    moved = (x + moved).clamp(low, high) - x
    updated = torch.where(_per_sample(stalled, delta), delta, moved)
    return updated, stalled


def pgd_step(
    x: torch.Tensor, delta: torch.Tensor, grad: torch.Tensor, cfg: AttackConfig
) -> torch.Tensor:
    """One normalised gradient step, projection and clamp for a single image."""
    updated, _ = _step_batch(x.unsqueeze(0), delta.unsqueeze(0), grad.unsqueeze(0), cfg)
    return updated[0]


def _random_init(
    x: torch.Tensor, cfg: AttackConfig, rng: np.random.Generator
) -> torch.Tensor:
    """Uniform start in the epsilon ball, drawn for one image."""
    dims = int(np.prod(x.shape[1:]))
    direction = rng.standard_normal(dims)
    direction /= np.linalg.norm(direction)
    radius = cfg.epsilon * rng.random() ** (1.0 / dims)
    delta = torch.as_tensor(direction * radius, dtype=x.dtype).view_as(x)
    low, high = cfg.clamp
    return (x + delta).clamp(low, high) - x


@dataclass(frozen=True, eq=False)
class _SampleAttack:
    delta: torch.Tensor
    adversarial: torch.Tensor
    trace: np.ndarray
    logits: torch.Tensor
    stalled: int


def _attack_sample(
    model: ModelAdapter,
    x: torch.Tensor,
    q: torch.Tensor,
    cfg: AttackConfig,
    rng: np.random.Generator,
) -> _SampleAttack:
    """PGD on a single image; x and q carry a leading batch axis of one."""
    # private copies so the arithmetic never depends on the caller's batch layout
    x = x.detach().clone()
    q = q.detach().clone()
    delta = _random_init(x, cfg, rng) if cfg.init == "random" else torch.zeros_like(x)

    trace: list[float] = []
    stalled_steps = 0
    for step in range(cfg.steps):
        x_adv = (x + delta).requires_grad_(True)
        try:
            loss = cross_entropy(model(x_adv), q, reduction="none")
        except NonFiniteError as e:
            raise AttackDivergedError(step=step, loss_trace=trace) from e
        if not torch.isfinite(loss).all():
            raise AttackDivergedError(step=step, loss_trace=trace)
        trace.append(float(loss[0]))
        (grad,) = torch.autograd.grad(loss.sum(), x_adv)
        delta, stalled = _step_batch(x, delta.detach(), grad.detach(), cfg)
        if bool(stalled[0]):
            stalled_steps += 1
            logger.debug("Zero gradient, perturbation unchanged", extra={"step": step})

    adversarial = (x + delta).detach()
    with torch.no_grad():
        try:
            logits = model(adversarial)
        except NonFiniteError as e:
            raise AttackDivergedError(step=cfg.steps, loss_trace=trace) from e
        trace.append(float(cross_entropy(logits, q, reduction="none")[0]))
    return _SampleAttack(
        delta=delta.detach(),
        adversarial=adversarial,
        trace=np.asarray(trace),
        logits=logits,
        stalled=stalled_steps,
    )


def run_pgd_batch(
    model: ModelAdapter,
    images: np.ndarray | torch.Tensor,
    labels: Sequence[int] | np.ndarray,
    cfg: AttackConfig,
    targets: Sequence[int] | np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> BatchPerturbationResult:
    """Attack every image of a batch; theta is read-only.

    Each image gets its own forward/backward per step, so a batched result
    equals ``run_pgd`` on that image bit for bit. Random starts are drawn from
    ``rng`` image by image in batch order.
    """
    x = model.as_input(images).detach()
    labels = np.asarray(labels, dtype=np.int64)

    if cfg.mode == "targeted":
        if targets is None:
            if cfg.target is None:
                raise AttackPreconditionError(field="target", value=None)
            targets = np.full(labels.shape, cfg.target, dtype=np.int64)
        targets = np.asarray(targets, dtype=np.int64)
        clash = np.flatnonzero(targets == labels)
        if clash.size:
            raise AttackPreconditionError(
                message=f"Targeted attack needs t != y; sample {int(clash[0])} has "
                f"t = y = {int(labels[clash[0]])}",
                field="target",
                value=int(targets[clash[0]]),
            )
        objective = one_hot_matrix(targets, model.num_classes)
    else:
        objective = one_hot_matrix(labels, model.num_classes)
    q = torch.as_tensor(objective, dtype=x.dtype)

    rng = rng or np.random.default_rng(0)
    per_sample = [
        _attack_sample(model, x[i : i + 1], q[i : i + 1], cfg, rng)
        for i in range(x.shape[0])
    ]

    if per_sample:
        delta = torch.cat([s.delta for s in per_sample])
        adversarial = torch.cat([s.adversarial for s in per_sample])
        logits = torch.cat([s.logits for s in per_sample]).cpu().numpy()
        trace = np.stack([s.trace for s in per_sample], axis=1)
    else:
        delta = torch.zeros_like(x)
        adversarial = x.clone()
        logits = np.zeros((0, model.num_classes))
        trace = np.zeros((cfg.steps + 1, 0))
    stalled_total = np.array([s.stalled for s in per_sample], dtype=np.int64)
    predictions = np.argmax(logits, axis=1).astype(np.int64)

    if cfg.mode == "targeted":
        success = predictions == targets
    else:
        success = predictions != labels

    return BatchPerturbationResult(
        delta=delta,
        adversarial_images=adversarial,
        success=success,
        loss_trace=trace,
        final_loss=trace[-1].copy(),
        predictions=predictions,
        stalled_steps=stalled_total,
        gradient_evaluations=cfg.steps * int(x.shape[0]),
    )


def run_pgd(
    model: ModelAdapter,
    sample: Sample,
    cfg: AttackConfig,
    rng: np.random.Generator | None = None,
) -> PerturbationResult:
    targets = None
    if cfg.mode == "targeted":
        if cfg.target is None:
            raise AttackPreconditionError(field="target", value=None)
        targets = [cfg.target]
    result = run_pgd_batch(
        model,
        np.asarray(sample.image)[None],
        [sample.fine_label],
        cfg,
        targets=targets,
        rng=rng,
    )
    return result.item(0)


def sample_target(
    y: ClassIndex, targets: SemanticTargetSet, rng: np.random.Generator
) -> ClassIndex:
    candidates = targets.targets.get(y, ())
    if not candidates:
        raise TargetSetError(message=f"Semantic target set for class {y} is empty")
    return int(candidates[int(rng.integers(len(candidates)))])


def sample_targets(
    labels: Sequence[int] | np.ndarray,
    targets: SemanticTargetSet,
    rng: np.random.Generator,
) -> np.ndarray:
    return np.array([sample_target(int(y), targets, rng) for y in labels], dtype=np.int64)


def attack_sweep_rows(
    result: BatchPerturbationResult,
    sample_ids: Sequence[int] | np.ndarray,
    cfg: AttackConfig,
    targets: Sequence[int] | np.ndarray | None = None,
) -> list[dict[str, object]]:
    rows = []
    for position, sample_id in enumerate(sample_ids):
        rows.append(
            {
                "sample_id": int(sample_id),
                "mode": cfg.mode,
                "epsilon": cfg.epsilon,
                "target_class": (
                    int(targets[position]) if targets is not None else ""
                ),
                "success": bool(result.success[position]),
                "final_loss": float(result.final_loss[position]),
                "pred_class": int(result.predictions[position]),
            }
        )
    return rows
