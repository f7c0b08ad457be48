"""SVG line charts for epsilon sweeps and corruption-severity aggregates."""

import io
import logging
from collections.abc import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

from matplotlib import rc_context  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from app.src.domain.metrics import SeverityAggregate, SeverityReport  # noqa: E402

logger = logging.getLogger(__name__)

# fixed ids and no timestamp so identical data renders to identical bytes
SVG_RC = {"svg.hashsalt": "sevtrain", "svg.fonttype": "none"}
SVG_METADATA = {"Date": None}

EPSILON_PANELS = (
    ("coarse_accuracy_of_mistakes", "Mistakes in true coarse class"),
    ("avg_mistake_path_similarity", "Avg. path similarity of mistakes"),
)


def _value(value: float | None) -> float:
    return float("nan") if value is None else value


def _render(figure: Figure) -> bytes:
    buffer = io.BytesIO()
    with rc_context(SVG_RC):
        figure.savefig(buffer, format="svg", metadata=SVG_METADATA)
    return buffer.getvalue()


def epsilon_sweep_chart(reports_by_model: Mapping[str, Sequence[SeverityReport]]) -> bytes:
    """Two panels against epsilon, one line per model; absent metrics leave a gap."""
    with rc_context(SVG_RC):
        figure = Figure(figsize=(10, 4))
        axes = figure.subplots(1, len(EPSILON_PANELS))
        for ax, (metric, title) in zip(axes, EPSILON_PANELS, strict=True):
            for model, reports in reports_by_model.items():
                points = sorted(
                    (r.condition.epsilon or 0.0, _value(r.metric(metric)))
                    for r in reports
                    if r.condition.kind == "adversarial"
                )
                ax.plot(
                    [eps for eps, _ in points],
                    [value for _, value in points],
                    marker="o",
                    label=model,
                )
            ax.set_title(title)
            ax.set_xlabel("epsilon (L2)")
            ax.set_ylim(0.0, 1.0)
            ax.grid(True, alpha=0.3)
        axes[0].legend()
        figure.tight_layout()
        return _render(figure)


def severity_aggregate_chart(
    aggregates_by_model: Mapping[str, Sequence[SeverityAggregate]],
) -> bytes:
    with rc_context(SVG_RC):
        figure = Figure(figsize=(6, 4))
        ax = figure.subplots()
        for model, aggregates in aggregates_by_model.items():
            ax.plot(
                [a.severity for a in aggregates],
                [_value(a.coarse_accuracy_of_mistakes) for a in aggregates],
                marker="o",
                label=model,
            )
        ax.set_title("Mistakes in true coarse class, mean over corruptions")
        ax.set_xlabel("corruption severity")
        ax.set_xticks([1, 2, 3, 4, 5])
        ax.set_ylim(0.0, 1.0)
        ax.grid(True, alpha=0.3)
        ax.legend()
        figure.tight_layout()
        return _render(figure)
