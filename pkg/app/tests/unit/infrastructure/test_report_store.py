import csv
import io
import json

import pytest

from app.src.core.exceptions.system_exceptions import RunDirectoryError
from app.src.domain.metrics import Condition, SeverityReport, compare_models, severity_aggregates
from app.src.infrastructure.report_store import (
    ReportStore,
    comparison_table,
    fmt,
    load_reports,
    parse_records_csv,
    records_csv,
    reports_csv,
    win_counts_csv,
)
from app.tests.framework.builders import records_from_pairs


def _report(condition, coarse):
    return SeverityReport(
        condition=condition,
        n_total=4,
        n_mistakes=0 if coarse is None else 2,
        top1_accuracy=0.5 if coarse is not None else 1.0,
        avg_mistake_path_similarity=None if coarse is None else 1 / 3,
        coarse_accuracy_of_mistakes=coarse,
    )


@pytest.fixture
def reports():
    return [
        _report(Condition.adversarial(0.0), None),
        _report(Condition.adversarial(0.5), 0.5),
        _report(Condition.corrupted("contrast", 2), 1.0),
    ]


class TestFormatting:
    @pytest.mark.parametrize(
        ("value", "expected"),
        [(None, ""), (True, "true"), (1 / 3, "0.333333333"), (7, "7"), ("eps", "eps")],
    )
    def test_fmt(self, value, expected):
        assert fmt(value) == expected

    def test_reports_csv(self, reports):
        rows = list(csv.DictReader(io.StringIO(reports_csv(reports))))

        assert [r["condition"] for r in rows] == ["adversarial", "adversarial", "corruption"]
        assert rows[0]["coarse_acc_mistakes"] == ""
        assert rows[1]["epsilon_or_severity"] == "0.5"
        assert rows[2]["kind"] == "contrast"
        assert rows[2]["epsilon_or_severity"] == "2"

    def test_records_csv_reparses(self, small_taxonomy):
        records = records_from_pairs([(0, 1), (2, 2)], small_taxonomy)

        assert parse_records_csv(records_csv(records)) == records


class TestComparisonOutput:
    """Test win-count tables across models."""

    def test_win_counts_rows(self, reports):
        comparison = compare_models({"a": reports, "b": reports})

        rows = list(csv.DictReader(io.StringIO(win_counts_csv(comparison))))

        assert len(rows) == 2 * len(comparison.levels) * 2
        assert {r["ties"] for r in rows if r["level"] == "eps=0.5"} == {"1"}

    def test_table_marks_absent_metrics(self, reports):
        comparison = compare_models({"a": reports})

        table = comparison_table(comparison, {"a": reports})

        assert "adversarial:eps=0 | -" in table
        assert "corruption:contrast@2 | 1.0000" in table


class TestReportStore:
    def test_write_and_load(self, reports, tmp_path):
        store = ReportStore(tmp_path)

        store.write_reports("corruption", "model-a", reports, severity_aggregates(reports))
        model, loaded = load_reports(tmp_path / "corruption.json")

        assert model == "model-a"
        assert loaded == reports
        assert sorted(store.written) == [
            "corruption-aggregates.csv",
            "corruption.csv",
            "corruption.json",
        ]
        document = json.loads((tmp_path / "corruption.json").read_text())
        assert document["aggregates"][0]["severity"] == 2

    def test_no_aggregates_file_without_aggregates(self, reports, tmp_path):
        store = ReportStore(tmp_path)

        store.write_reports("adversarial", "model-a", reports)

        assert not (tmp_path / "adversarial-aggregates.csv").exists()

    def test_unreadable_report(self, tmp_path):
        (tmp_path / "bad.json").write_text("[]")

        with pytest.raises(RunDirectoryError):
            load_reports(tmp_path / "bad.json")
