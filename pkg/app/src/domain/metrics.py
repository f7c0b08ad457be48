"""Mistake-severity metrics and the evaluation sweeps built on them."""

import logging
import math
from collections import defaultdict
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np

from app.src.core.exceptions.data_exceptions import DatasetSpecError
from app.src.core.exceptions.system_exceptions import (
    ConfigurationError,
    GridMismatchError,
)
from app.src.domain.attack import AttackConfig, InitMode, attack_sweep_rows, run_pgd_batch
from app.src.domain.corruption import corruption_of
from app.src.domain.datasets import Dataset
from app.src.domain.model import ModelAdapter, predict
from app.src.domain.taxonomy import (
    ClassTaxonomy,
    SimilarityMatrix,
    build_similarity_matrix,
    coarse_of,
)

logger = logging.getLogger(__name__)

DEFAULT_EPSILONS = (0.0, 0.25, 0.5, 1.0, 1.5, 1.75, 2.0, 2.5)
SEVERITY_METRICS = ("coarse_accuracy_of_mistakes", "avg_mistake_path_similarity")

ConditionKind = Literal["clean", "adversarial", "corruption"]


@dataclass(frozen=True)
class EvalRecord:
    sample_id: int
    true_fine: int
    pred_fine: int
    true_coarse: int
    pred_coarse: int

    @property
    def is_mistake(self) -> bool:
        return self.pred_fine != self.true_fine


@dataclass(frozen=True)
class Condition:
    kind: ConditionKind
    epsilon: float | None = None
    corruption: str | None = None
    severity: int | None = None

    @classmethod
    def clean(cls) -> "Condition":
        return cls("clean")

    @classmethod
    def adversarial(cls, epsilon: float) -> "Condition":
        return cls("adversarial", epsilon=float(epsilon))

    @classmethod
    def corrupted(cls, kind: str, severity: int) -> "Condition":
        return cls("corruption", corruption=kind, severity=int(severity))

    @property
    def key(self) -> str:
        if self.kind == "adversarial":
            return f"adversarial:eps={self.epsilon:g}"
        if self.kind == "corruption":
            return f"corruption:{self.corruption}@{self.severity}"
        return "clean"

    @property
    def level(self) -> str:
        """Grouping used for win counts: the epsilon or the severity."""
        if self.kind == "adversarial":
            return f"eps={self.epsilon:g}"
        if self.kind == "corruption":
            return f"severity={self.severity}"
        return "clean"

    def to_document(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "epsilon": self.epsilon,
            "corruption": self.corruption,
            "severity": self.severity,
        }

    @classmethod
    def from_document(cls, document: Mapping[str, Any]) -> "Condition":
        return cls(
            kind=document["kind"],
            epsilon=document.get("epsilon"),
            corruption=document.get("corruption"),
            severity=document.get("severity"),
        )


@dataclass(frozen=True)
class SeverityReport:
    condition: Condition
    n_total: int
    n_mistakes: int
    top1_accuracy: float
    avg_mistake_path_similarity: float | None
    coarse_accuracy_of_mistakes: float | None

    def metric(self, name: str) -> float | None:
        return getattr(self, name)

    def to_document(self) -> dict[str, Any]:
        return {
            "condition": self.condition.to_document(),
            "n_total": self.n_total,
            "n_mistakes": self.n_mistakes,
            "top1_accuracy": self.top1_accuracy,
            "avg_mistake_path_similarity": self.avg_mistake_path_similarity,
            "coarse_accuracy_of_mistakes": self.coarse_accuracy_of_mistakes,
        }

    @classmethod
    def from_document(cls, document: Mapping[str, Any]) -> "SeverityReport":
        return cls(
            condition=Condition.from_document(document["condition"]),
            n_total=int(document["n_total"]),
            n_mistakes=int(document["n_mistakes"]),
            top1_accuracy=float(document["top1_accuracy"]),
            avg_mistake_path_similarity=document["avg_mistake_path_similarity"],
            coarse_accuracy_of_mistakes=document["coarse_accuracy_of_mistakes"],
        )


@dataclass(frozen=True)
class ConditionResult:
    condition: Condition
    records: list[EvalRecord]
    attack_rows: list[dict[str, object]] = field(default_factory=list)


@dataclass(frozen=True)
class SeverityAggregate:
    severity: int
    kinds: int
    top1_accuracy: float
    coarse_accuracy_of_mistakes: float | None
    avg_mistake_path_similarity: float | None


@dataclass(frozen=True)
class CorruptionGrid:
    reports: list[SeverityReport]
    aggregates: list[SeverityAggregate]

    @property
    def kinds(self) -> list[str]:
        return sorted({r.condition.corruption for r in self.reports if r.condition.corruption})


def _check_label_space(model: ModelAdapter, dataset: Dataset, taxonomy: ClassTaxonomy) -> None:
    if not model.num_classes == dataset.num_fine == taxonomy.num_fine:
        raise DatasetSpecError(
            message=f"Label spaces differ: model {model.num_classes}, dataset "
            f"{dataset.num_fine}, taxonomy {taxonomy.num_fine} classes"
        )


def records_from_predictions(
    predictions: np.ndarray, dataset: Dataset, taxonomy: ClassTaxonomy
) -> list[EvalRecord]:
    coarse_map = taxonomy.coarse_map
    return [
        EvalRecord(
            sample_id=index,
            true_fine=int(true),
            pred_fine=int(pred),
            true_coarse=coarse_map[int(true)],
            pred_coarse=coarse_map[int(pred)],
        )
        for index, (true, pred) in enumerate(
            zip(dataset.fine_labels, predictions, strict=True)
        )
    ]


def evaluate(
    model: ModelAdapter,
    dataset: Dataset,
    taxonomy: ClassTaxonomy,
    batch_size: int = 256,
) -> list[EvalRecord]:
    _check_label_space(model, dataset, taxonomy)
    predictions = predict(model, dataset.images, batch_size=batch_size)
    return records_from_predictions(predictions, dataset, taxonomy)


def severity_report(
    records: Sequence[EvalRecord],
    sim: SimilarityMatrix,
    taxonomy: ClassTaxonomy,
    condition: Condition | None = None,
) -> SeverityReport:
    """Accuracy plus the two severity metrics, computed over the same mistakes."""
    if not records:
        raise DatasetSpecError(message="Cannot report on an empty record list")

    sims: list[float] = []
    same_coarse = 0
    for record in records:
        if record.true_coarse != coarse_of(taxonomy, record.true_fine) or (
            record.pred_coarse != coarse_of(taxonomy, record.pred_fine)
        ):
            raise DatasetSpecError(
                message=f"Record {record.sample_id} coarse labels disagree with the taxonomy"
            )
        if record.is_mistake:
            sims.append(sim[record.pred_fine, record.true_fine])
            same_coarse += record.pred_coarse == record.true_coarse

    n_total = len(records)
    n_mistakes = len(sims)
    return SeverityReport(
        condition=condition or Condition.clean(),
        n_total=n_total,
        n_mistakes=n_mistakes,
        top1_accuracy=1.0 - n_mistakes / n_total,
        avg_mistake_path_similarity=(math.fsum(sims) / n_mistakes) if sims else None,
        coarse_accuracy_of_mistakes=(same_coarse / n_mistakes) if sims else None,
    )


def adversarial_condition(
    model: ModelAdapter,
    dataset: Dataset,
    taxonomy: ClassTaxonomy,
    epsilon: float,
    steps: int = 10,
    init: InitMode = "zero",
    seed: int = 0,
    batch_size: int = 256,
) -> ConditionResult:
    """Untargeted PGD on every sample at one epsilon; epsilon 0 evaluates clean."""
    _check_label_space(model, dataset, taxonomy)
    condition = Condition.adversarial(epsilon)
    if epsilon == 0:
        return ConditionResult(condition, evaluate(model, dataset, taxonomy, batch_size))

    cfg = AttackConfig(epsilon=epsilon, steps=steps, mode="untargeted", init=init)
    rng = np.random.default_rng([seed, int(round(epsilon * 1_000_000))])
    predictions: list[np.ndarray] = []
    rows: list[dict[str, object]] = []
    for start in range(0, len(dataset), batch_size):
        stop = min(start + batch_size, len(dataset))
        result = run_pgd_batch(
            model,
            dataset.images[start:stop],
            dataset.fine_labels[start:stop],
            cfg,
            rng=rng,
        )
        predictions.append(result.predictions)
        rows.extend(attack_sweep_rows(result, range(start, stop), cfg))

    records = records_from_predictions(np.concatenate(predictions), dataset, taxonomy)
    return ConditionResult(condition, records, rows)


def _validate_grid(epsilons: Sequence[float]) -> None:
    values = [float(e) for e in epsilons]
    if not values or values[0] != 0.0:
        raise ConfigurationError(
            setting="attack.epsilons",
            detail="The epsilon grid must start at 0 for the clean baseline",
        )
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigurationError(
            setting="attack.epsilons",
            detail=f"The epsilon grid must be strictly ascending: {values}",
        )


def adversarial_sweep(
    model: ModelAdapter,
    dataset: Dataset,
    taxonomy: ClassTaxonomy,
    epsilons: Sequence[float] = DEFAULT_EPSILONS,
    sim: SimilarityMatrix | None = None,
    steps: int = 10,
    init: InitMode = "zero",
    seed: int = 0,
    on_condition: Callable[[ConditionResult], None] | None = None,
) -> list[SeverityReport]:
    _validate_grid(epsilons)
    sim = sim or build_similarity_matrix(taxonomy)
    reports = []
    for epsilon in epsilons:
        result = adversarial_condition(
            model, dataset, taxonomy, float(epsilon), steps=steps, init=init, seed=seed
        )
        if on_condition is not None:
            on_condition(result)
        report = severity_report(result.records, sim, taxonomy, result.condition)
        logger.info(
            "Adversarial condition evaluated",
            extra={"epsilon": epsilon, "top1": f"{report.top1_accuracy:.4f}"},
        )
        reports.append(report)
    return reports


def corruption_condition(
    model: ModelAdapter, corrupted: Dataset, taxonomy: ClassTaxonomy
) -> ConditionResult:
    kind, severity = corruption_of(corrupted)
    return ConditionResult(
        Condition.corrupted(kind, severity), evaluate(model, corrupted, taxonomy)
    )


def severity_aggregates(reports: Iterable[SeverityReport]) -> list[SeverityAggregate]:
    """Per-severity means over the corruption kinds present; absent values are skipped."""
    by_severity: dict[int, list[SeverityReport]] = defaultdict(list)
    for report in reports:
        if report.condition.kind == "corruption" and report.condition.severity is not None:
            by_severity[report.condition.severity].append(report)

    def mean(values: list[float | None]) -> float | None:
        present = [v for v in values if v is not None]
        return math.fsum(present) / len(present) if present else None

    return [
        SeverityAggregate(
            severity=severity,
            kinds=len(group),
            top1_accuracy=math.fsum(r.top1_accuracy for r in group) / len(group),
            coarse_accuracy_of_mistakes=mean(
                [r.coarse_accuracy_of_mistakes for r in group]
            ),
            avg_mistake_path_similarity=mean(
                [r.avg_mistake_path_similarity for r in group]
            ),
        )
        for severity, group in sorted(by_severity.items())
    ]


def corruption_sweep(
    model: ModelAdapter,
    corrupted_sets: Sequence[Dataset],
    taxonomy: ClassTaxonomy,
    sim: SimilarityMatrix | None = None,
    on_condition: Callable[[ConditionResult], None] | None = None,
) -> CorruptionGrid:
    sim = sim or build_similarity_matrix(taxonomy)
    reports = []
    for corrupted in corrupted_sets:
        result = corruption_condition(model, corrupted, taxonomy)
        if on_condition is not None:
            on_condition(result)
        reports.append(severity_report(result.records, sim, taxonomy, result.condition))
    reports.sort(key=lambda r: (r.condition.corruption or "", r.condition.severity or 0))
    return CorruptionGrid(reports=reports, aggregates=severity_aggregates(reports))


@dataclass(frozen=True)
class ModelComparison:
    """Win and tie counts per metric, level and model, plus pairwise head-to-heads.

    ``wins[metric][level][model]`` counts conditions where the model alone held
    the best value; ``ties[metric][level][model]`` counts conditions where it
    shared the best value with others. ``head_to_head[metric][level][(a, b)]``
    counts conditions where ``a`` strictly beat ``b``.
    """

    models: tuple[str, ...]
    levels: tuple[str, ...]
    conditions: int
    wins: dict[str, dict[str, dict[str, int]]]
    ties: dict[str, dict[str, dict[str, int]]]
    head_to_head: dict[str, dict[str, dict[tuple[str, str], int]]]


def _grid_check(reports_by_model: Mapping[str, Sequence[SeverityReport]]) -> list[Condition]:
    grids = {
        name: {r.condition for r in reports} for name, reports in reports_by_model.items()
    }
    union = set().union(*grids.values())
    missing = {
        name: sorted(c.key for c in union - grid)
        for name, grid in grids.items()
        if union - grid
    }
    if missing:
        raise GridMismatchError(missing=missing)
    return sorted(union, key=lambda c: (c.kind, c.epsilon or 0.0, c.corruption or "", c.severity or 0))


def compare_models(
    reports_by_model: Mapping[str, Sequence[SeverityReport]],
) -> ModelComparison:
    if not reports_by_model:
        raise ConfigurationError(setting="report inputs", detail="No models to compare")
    conditions = _grid_check(reports_by_model)
    models = tuple(reports_by_model)
    indexed = {
        name: {r.condition: r for r in reports} for name, reports in reports_by_model.items()
    }
    levels = tuple(dict.fromkeys(c.level for c in conditions))

    wins = {m: {lv: dict.fromkeys(models, 0) for lv in levels} for m in SEVERITY_METRICS}
    ties = {m: {lv: dict.fromkeys(models, 0) for lv in levels} for m in SEVERITY_METRICS}
    pairs = [(a, b) for a in models for b in models if a != b]
    head_to_head = {
        m: {lv: dict.fromkeys(pairs, 0) for lv in levels} for m in SEVERITY_METRICS
    }

    for condition in conditions:
        for metric in SEVERITY_METRICS:
            values = {
                name: indexed[name][condition].metric(metric)
                for name in models
                if indexed[name][condition].metric(metric) is not None
            }
            if values:
                best = max(values.values())
                leaders = [name for name, value in values.items() if value == best]
                tally = wins if len(leaders) == 1 else ties
                for name in leaders:
                    tally[metric][condition.level][name] += 1
            for a, b in pairs:
                if a in values and b in values and values[a] > values[b]:
                    head_to_head[metric][condition.level][(a, b)] += 1

    return ModelComparison(
        models=models,
        levels=levels,
        conditions=len(conditions),
        wins=wins,
        ties=ties,
        head_to_head=head_to_head,
    )
