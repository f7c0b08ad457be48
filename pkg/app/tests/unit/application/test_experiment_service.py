import csv
import io
import json

import numpy as np
import pytest

from app.src.application.experiment_service import model_label
from app.src.core.exceptions.system_exceptions import (
    ConfigurationError,
    GridMismatchError,
    RunDirectoryError,
)
from app.src.models.run_config import parse_run_config
from app.tests.framework.assertions import RunAssertions
from app.tests.framework.fixtures.service_fixtures import tiny_config_document


def _config(path, **overrides):
    return parse_run_config(tiny_config_document(path, **overrides))


@pytest.fixture
def trained(experiment_service, tiny_config):
    """A finished two-epoch run in ``run_dir``."""
    return experiment_service.train(tiny_config)


class TestTrain:
    """Test the training command end to end on the tiny run."""

    def test_outputs(self, trained, run_dir):
        assert trained.summary["epochs"] == 2
        assert [p.split("/")[-1] for p in trained.summary["checkpoints"]] == [
            "epoch-0001.json",
            "epoch-0002.json",
        ]
        manifest = RunAssertions.assert_manifest(run_dir, "train")
        assert manifest["code_version"] == "0123456789abcdef"
        assert manifest["decisions"]["stage_boundary_momentum"] == "reset"
        assert manifest["decisions"]["target_set_graph"] == "supplied taxonomy tree"
        assert manifest["decisions"]["augmentation_splits"] == ["train"]
        assert manifest["decisions"]["attack_batching"].startswith("one forward/backward per image")
        RunAssertions.assert_artifacts_match(run_dir, "train")

    def test_training_log(self, trained, run_dir):
        rows = list(csv.DictReader(io.StringIO((run_dir / "training_log.csv").read_text())))

        assert [(r["epoch"], r["objective"]) for r in rows] == [
            ("1", "standard"),
            ("2", "semantic_targeted"),
        ]
        assert rows[0]["attack_success_rate"] == ""
        assert 0.0 <= float(rows[1]["attack_success_rate"]) <= 1.0

    def test_reproducible(self, experiment_service, trained, tmp_path):
        again = experiment_service.train(_config(tmp_path / "again"))

        assert again.summary["parameter_checksum"] == trained.summary["parameter_checksum"]
        assert again.artifacts["training_log.csv"] == trained.artifacts["training_log.csv"]

    def test_seed_changes_result(self, experiment_service, trained, tmp_path):
        other = experiment_service.train(_config(tmp_path / "other", seed=12))

        assert other.summary["parameter_checksum"] != trained.summary["parameter_checksum"]

    def test_rerun_with_other_config_refused(self, experiment_service, trained, run_dir):
        with pytest.raises(RunDirectoryError):
            experiment_service.train(_config(run_dir, seed=99))


class TestEvaluation:
    """Test adversarial and corruption evaluation of trained checkpoints."""

    def test_eval_adv(self, experiment_service, trained, run_dir, tmp_path):
        checkpoint = run_dir / "checkpoints" / "epoch-0002.json"
        out = tmp_path / "adv"

        result = experiment_service.eval_adv(_config(out), [checkpoint])

        label = model_label(checkpoint)
        assert label == "run-epoch-0002"
        document = json.loads((out / f"adversarial--{label}.json").read_text())
        assert [r["condition"]["epsilon"] for r in document["reports"]] == [0.0, 0.5]
        assert (out / "records" / label / "adversarial-eps=0.csv").is_file()
        assert (out / "attacks" / label / "adversarial-eps=0.5.csv").is_file()
        assert not (out / "attacks" / label / "adversarial-eps=0.csv").exists()
        assert "epsilon-sweep.svg" in result.artifacts
        manifest = RunAssertions.assert_manifest(out, "eval-adv")
        assert set(manifest["inputs"]) == {label}
        RunAssertions.assert_artifacts_match(out, "eval-adv")

    def test_eval_corrupt(self, experiment_service, trained, run_dir, tmp_path):
        checkpoint = run_dir / "checkpoints" / "epoch-0001.json"
        out = tmp_path / "corrupt"

        result = experiment_service.eval_corrupt(_config(out), [checkpoint])

        assert result.summary["conditions"] == 4
        rows = list(csv.DictReader(io.StringIO((out / "corruption--run-epoch-0001.csv").read_text())))
        assert [(r["kind"], r["epsilon_or_severity"]) for r in rows] == [
            ("contrast", "1"),
            ("contrast", "5"),
            ("gaussian_noise", "1"),
            ("gaussian_noise", "5"),
        ]
        aggregates = (out / "corruption--run-epoch-0001-aggregates.csv").read_text().splitlines()
        assert len(aggregates) == 3
        RunAssertions.assert_artifacts_match(out, "eval-corrupt")

    def test_missing_checkpoint(self, experiment_service, tmp_path):
        with pytest.raises(ConfigurationError) as exc_info:
            experiment_service.eval_adv(_config(tmp_path / "x"), [tmp_path / "absent.json"])

        assert exc_info.value.setting == "--checkpoint"

    def test_no_checkpoint(self, experiment_service, tmp_path):
        with pytest.raises(ConfigurationError):
            experiment_service.eval_corrupt(_config(tmp_path / "x"), [])


class TestReport:
    """Test comparison across evaluated models."""

    def test_two_models(self, experiment_service, trained, run_dir, tmp_path):
        checkpoints = [run_dir / "checkpoints" / f"epoch-000{i}.json" for i in (1, 2)]
        experiment_service.eval_adv(_config(tmp_path / "adv"), checkpoints)
        experiment_service.eval_corrupt(_config(tmp_path / "corrupt"), checkpoints)
        out = tmp_path / "report"

        result = experiment_service.report(_config(out), [tmp_path / "adv", tmp_path / "corrupt"])

        assert result.summary["adversarial"] == {
            "models": ["run-epoch-0001", "run-epoch-0002"],
            "conditions": 2,
        }
        assert result.summary["corruption"]["conditions"] == 4
        for name in ("comparison-adversarial.txt", "wins-corruption.csv", "head-to-head-adversarial.csv"):
            assert (out / name).is_file()
        RunAssertions.assert_artifacts_match(out, "report")

    def test_grid_mismatch(self, experiment_service, trained, run_dir, tmp_path):
        checkpoint = run_dir / "checkpoints" / "epoch-0002.json"
        experiment_service.eval_adv(_config(tmp_path / "a"), [checkpoint])
        narrow = tiny_config_document(tmp_path / "b")
        narrow["attack"] = {"epsilons": [0], "steps": 2}
        experiment_service.eval_adv(parse_run_config(narrow), [run_dir / "checkpoints" / "epoch-0001.json"])

        with pytest.raises(GridMismatchError):
            experiment_service.report(_config(tmp_path / "r"), [tmp_path / "a", tmp_path / "b"])

    def test_directory_without_reports(self, experiment_service, tmp_path):
        (tmp_path / "empty").mkdir()

        with pytest.raises(RunDirectoryError):
            experiment_service.report(_config(tmp_path / "r"), [tmp_path / "empty"])


class TestDataCommands:
    """Test dataset generation and target-set export."""

    def test_gen_data_round_trips_through_files(self, experiment_service, tmp_path):
        source = _config(tmp_path / "data")
        experiment_service.gen_data(source)
        RunAssertions.assert_artifacts_match(tmp_path / "data", "gen-data")
        files = tiny_config_document(tmp_path / "unused")
        files["dataset"] = {
            "kind": "files",
            "train_path": str(tmp_path / "data" / "data" / "train.json"),
            "test_path": str(tmp_path / "data" / "data" / "test.json"),
        }
        files["taxonomy"] = str(tmp_path / "data" / "taxonomy.json")

        reloaded = experiment_service.load_data(parse_run_config(files))
        generated = experiment_service.load_data(source)

        np.testing.assert_array_equal(reloaded.train.images, generated.train.images)
        np.testing.assert_array_equal(reloaded.test.fine_labels, generated.test.fine_labels)
        assert reloaded.taxonomy.fine_names == generated.taxonomy.fine_names

    def test_make_targets(self, experiment_service, tmp_path):
        result = experiment_service.make_targets(_config(tmp_path / "targets"))

        document = json.loads((tmp_path / "targets" / "targets.json").read_text())
        assert document["k"] == 2
        assert len(document["targets"]) == 4
        assert result.summary == {"classes": 4, "k": 2}

    def test_eval_limit(self, experiment_service, tmp_path):
        document = tiny_config_document(tmp_path / "x")
        document["dataset"]["eval_limit"] = 5

        bundle = experiment_service.load_data(parse_run_config(document))

        assert len(bundle.test) == 5
        assert len(bundle.train) == 16

    def test_missing_taxonomy_file(self, experiment_service, tmp_path):
        document = tiny_config_document(tmp_path / "x")
        document["dataset"] = {"kind": "cifar100", "train_path": "a.bin", "test_path": "b.bin"}
        document["taxonomy"] = str(tmp_path / "absent.json")

        with pytest.raises(ConfigurationError) as exc_info:
            experiment_service.load_data(parse_run_config(document))

        assert exc_info.value.setting == "taxonomy"
