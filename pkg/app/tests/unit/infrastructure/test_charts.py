import xml.etree.ElementTree as ET

from app.src.domain.metrics import Condition, SeverityAggregate, SeverityReport
from app.src.infrastructure.charts import epsilon_sweep_chart, severity_aggregate_chart


def _sweep(values):
    return [
        SeverityReport(
            condition=Condition.adversarial(eps),
            n_total=10,
            n_mistakes=0 if value is None else 4,
            top1_accuracy=0.6,
            avg_mistake_path_similarity=value,
            coarse_accuracy_of_mistakes=value,
        )
        for eps, value in zip((0.0, 0.5, 1.0), values, strict=True)
    ]


class TestCharts:
    """Test SVG rendering of sweeps."""

    def test_epsilon_sweep_is_svg(self):
        svg = epsilon_sweep_chart({"a": _sweep([None, 0.4, 0.3]), "b": _sweep([0.5, 0.5, 0.2])})

        root = ET.fromstring(svg)
        assert root.tag.endswith("svg")

    def test_rendering_is_deterministic(self):
        data = {"a": _sweep([0.1, 0.4, 0.3])}

        assert epsilon_sweep_chart(data) == epsilon_sweep_chart(data)

    def test_aggregate_chart(self):
        aggregates = [
            SeverityAggregate(severity=s, kinds=7, top1_accuracy=0.5,
                              coarse_accuracy_of_mistakes=0.1 * s, avg_mistake_path_similarity=0.2)
            for s in range(1, 6)
        ]

        svg = severity_aggregate_chart({"a": aggregates})

        assert ET.fromstring(svg).tag.endswith("svg")
        assert svg == severity_aggregate_chart({"a": aggregates})
