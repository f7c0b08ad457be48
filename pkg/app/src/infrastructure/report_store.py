import csv
import io
import json
import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import asdict
from pathlib import Path
from typing import Any

from app.src.core.exceptions.system_exceptions import RunDirectoryError
from app.src.domain.metrics import (
    SEVERITY_METRICS,
    EvalRecord,
    ModelComparison,
    SeverityAggregate,
    SeverityReport,
)
from app.src.domain.objectives import EpochLog
from app.src.infrastructure.locking.atomic_operations import AtomicFileOperations

logger = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "condition",
    "epsilon_or_severity",
    "kind",
    "top1",
    "n_mistakes",
    "avg_path_sim",
    "coarse_acc_mistakes",
)
RECORD_COLUMNS = ("sample_id", "true_fine", "pred_fine", "true_coarse", "pred_coarse")
TRAINING_LOG_COLUMNS = (
    "epoch",
    "stage",
    "objective",
    "mean_loss",
    "train_acc",
    "attack_success_rate",
)
ATTACK_COLUMNS = (
    "sample_id",
    "mode",
    "epsilon",
    "target_class",
    "success",
    "final_loss",
    "pred_class",
)
ABSENT = "-"


def fmt(value: Any) -> str:
    """Nine significant digits for floats; absent values become an empty field."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def _csv(columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(value) for value in row])
    return buffer.getvalue()


def report_row(report: SeverityReport) -> list[Any]:
    condition = report.condition
    if condition.kind == "adversarial":
        level: Any = condition.epsilon
    elif condition.kind == "corruption":
        level = condition.severity
    else:
        level = None
    return [
        condition.kind,
        level,
        condition.corruption,
        report.top1_accuracy,
        report.n_mistakes,
        report.avg_mistake_path_similarity,
        report.coarse_accuracy_of_mistakes,
    ]


def reports_csv(reports: Sequence[SeverityReport]) -> str:
    return _csv(REPORT_COLUMNS, (report_row(r) for r in reports))


def records_csv(records: Sequence[EvalRecord]) -> str:
    return _csv(
        RECORD_COLUMNS,
        ([getattr(r, column) for column in RECORD_COLUMNS] for r in records),
    )


def parse_records_csv(text: str) -> list[EvalRecord]:
    reader = csv.DictReader(io.StringIO(text))
    return [
        EvalRecord(**{column: int(row[column]) for column in RECORD_COLUMNS})
        for row in reader
    ]


def training_log_csv(log: Sequence[EpochLog]) -> str:
    return _csv(
        TRAINING_LOG_COLUMNS,
        (
            [
                entry.epoch,
                entry.stage,
                entry.objective.value,
                entry.mean_loss,
                entry.train_acc,
                entry.attack_success_rate,
            ]
            for entry in log
        ),
    )


def attack_rows_csv(rows: Sequence[Mapping[str, Any]]) -> str:
    return _csv(ATTACK_COLUMNS, ([row[c] for c in ATTACK_COLUMNS] for row in rows))


def aggregates_csv(aggregates: Sequence[SeverityAggregate]) -> str:
    return _csv(
        ("severity", "kinds", "top1", "avg_path_sim", "coarse_acc_mistakes"),
        (
            [
                a.severity,
                a.kinds,
                a.top1_accuracy,
                a.avg_mistake_path_similarity,
                a.coarse_accuracy_of_mistakes,
            ]
            for a in aggregates
        ),
    )


def win_counts_csv(comparison: ModelComparison) -> str:
    return _csv(
        ("metric", "level", "model", "wins", "ties"),
        (
            [
                metric,
                level,
                model,
                comparison.wins[metric][level][model],
                comparison.ties[metric][level][model],
            ]
            for metric in SEVERITY_METRICS
            for level in comparison.levels
            for model in comparison.models
        ),
    )


def head_to_head_csv(comparison: ModelComparison) -> str:
    return _csv(
        ("metric", "level", "model", "opponent", "better_on"),
        (
            [metric, level, a, b, count]
            for metric in SEVERITY_METRICS
            for level in comparison.levels
            for (a, b), count in comparison.head_to_head[metric][level].items()
        ),
    )


def comparison_table(
    comparison: ModelComparison,
    reports_by_model: Mapping[str, Sequence[SeverityReport]],
) -> str:
    """Plain-text table of every condition's severity metrics, then the win counts."""
    models = comparison.models
    lines = []
    for metric in SEVERITY_METRICS:
        lines.append(f"## {metric}")
        lines.append(" | ".join(["condition", *models]))
        keys = list(dict.fromkeys(r.condition.key for r in reports_by_model[models[0]]))
        indexed = {
            name: {r.condition.key: r for r in reports}
            for name, reports in reports_by_model.items()
        }
        for key in keys:
            cells = []
            for name in models:
                value = indexed[name][key].metric(metric)
                cells.append(ABSENT if value is None else f"{value:.4f}")
            lines.append(" | ".join([key, *cells]))
        lines.append("")
        lines.append(" | ".join(["wins (ties)", *models]))
        for level in comparison.levels:
            cells = [
                f"{comparison.wins[metric][level][m]} ({comparison.ties[metric][level][m]})"
                for m in models
            ]
            lines.append(" | ".join([level, *cells]))
        lines.append("")
    return "\n".join(lines)


class ReportStore:
    def __init__(self, directory: Path, atomic_ops: AtomicFileOperations | None = None):
        self.directory = directory
        self.atomic_ops = atomic_ops or AtomicFileOperations()
        self.written: dict[str, str] = {}

    def write_text(self, name: str, text: str) -> Path:
        path = self.directory / name
        self.written[name] = self.atomic_ops.write_text(path, text)
        logger.debug("Wrote report", extra={"path": str(path)})
        return path

    def write_bytes(self, name: str, data: bytes) -> Path:
        path = self.directory / name
        self.written[name] = self.atomic_ops.write_bytes(path, data)
        logger.info("Wrote chart", extra={"path": str(path)})
        return path

    def write_json(self, name: str, document: Any) -> Path:
        return self.write_text(name, json.dumps(document, indent=2, sort_keys=True) + "\n")

    def write_reports(
        self,
        stem: str,
        model: str,
        reports: Sequence[SeverityReport],
        aggregates: Sequence[SeverityAggregate] = (),
    ) -> None:
        self.write_json(
            f"{stem}.json",
            {
                "model": model,
                "reports": [r.to_document() for r in reports],
                "aggregates": [asdict(a) for a in aggregates],
            },
        )
        self.write_text(f"{stem}.csv", reports_csv(reports))
        if aggregates:
            self.write_text(f"{stem}-aggregates.csv", aggregates_csv(aggregates))


def load_reports(path: Path) -> tuple[str, list[SeverityReport]]:
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
        return str(document["model"]), [
            SeverityReport.from_document(entry) for entry in document["reports"]
        ]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise RunDirectoryError(
            message=f"Unreadable report file {path}",
            path=str(path),
            operation="read",
            original_error=e,
        ) from e
