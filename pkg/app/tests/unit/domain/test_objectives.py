from pathlib import Path

import numpy as np
import pytest

from app.src.core.exceptions.data_exceptions import DatasetSpecError
from app.src.core.exceptions.model_exceptions import LabelModificationError
from app.src.core.exceptions.system_exceptions import ConfigurationError
from app.src.domain.datasets import Batch
from app.src.domain.model import (
    OptimizerConfig,
    TrainState,
    build_reference_net,
    parameter_checksum,
)
from app.src.domain.objectives import (
    PRESET_NAMES,
    Objective,
    Recipe,
    Scale,
    TrainingHyperparameters,
    TrainingStage,
    make_label,
    preset,
    run_recipe,
    train_step,
)
from app.src.domain.taxonomy import build_similarity_matrix, build_target_sets

NO_AUGMENTATION = TrainingHyperparameters(batch_size=10, lr=0.1, augmentation=None, attack_steps=2)


class RecordingCheckpoints:
    def __init__(self) -> None:
        self.saved: list[tuple[str, int, str]] = []

    def save_checkpoint(self, state: TrainState, name: str) -> Path:
        self.saved.append((name, state.epoch, parameter_checksum(state.model)))
        return Path(f"{name}.json")

    def checksum(self, path: Path) -> str:
        return next(c for n, _, c in self.saved if f"{n}.json" == path.name)


def _batch(ds, size=None):
    idx = np.arange(size or len(ds))
    return Batch(idx, ds.images[idx], ds.fine_labels[idx], ds.coarse_labels[idx])


class TestPresets:
    """Test the named recipes at both scales."""

    @pytest.mark.parametrize(
        "name, objective, epsilon, label_modification, epochs",
        [
            ("Standard", Objective.STANDARD, None, False, 200),
            ("AdvRobust", Objective.UNTARGETED_ADVERSARIAL, 1.0, False, 200),
            ("LE-SmT", Objective.SEMANTIC_TARGETED, 1.0, False, 200),
            ("HE-SmT", Objective.SEMANTIC_TARGETED, 2.5, False, 200),
            ("HE-SmT-LM", Objective.SEMANTIC_TARGETED, 2.5, True, 300),
        ],
    )
    def test_single_stage_presets(self, name, objective, epsilon, label_modification, epochs):
        recipe = preset(name, Scale.PAPER)

        assert len(recipe.stages) == 1
        stage = recipe.stages[0]
        assert stage.objective == objective
        assert stage.epsilon == epsilon
        assert stage.label_modification == label_modification
        assert stage.epochs == epochs

    def test_st_is_two_stages(self):
        recipe = preset("ST", "paper")

        assert [s.objective for s in recipe.stages] == [
            Objective.SEMANTIC_TARGETED,
            Objective.STANDARD,
        ]
        assert [s.epochs for s in recipe.stages] == [200, 100]
        assert recipe.stages[0].label_modification
        assert recipe.total_epochs == 300

    def test_desk_scale_divides_epochs(self):
        recipe = preset("ST", Scale.DESK, desk_factor=20)

        assert [s.epochs for s in recipe.stages] == [10, 5]
        assert recipe.stages[0].epsilon == 2.5

    def test_desk_scale_keeps_at_least_one_epoch(self):
        recipe = preset("Standard", Scale.DESK, desk_factor=1000)

        assert recipe.stages[0].epochs == 1

    def test_all_presets_listed(self):
        assert PRESET_NAMES == ("Standard", "AdvRobust", "LE-SmT", "HE-SmT", "HE-SmT-LM", "ST")

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError) as exc_info:
            preset("Robust")

        assert "Standard" in exc_info.value.detail


class TestTrainingStage:
    def test_adversarial_stage_needs_epsilon(self):
        with pytest.raises(ConfigurationError):
            TrainingStage(Objective.UNTARGETED_ADVERSARIAL, 1)

    def test_standard_stage_rejects_epsilon(self):
        with pytest.raises(ConfigurationError):
            TrainingStage(Objective.STANDARD, 1, epsilon=1.0)

    def test_label_modification_only_for_semantic(self):
        with pytest.raises(ConfigurationError):
            TrainingStage(Objective.UNTARGETED_ADVERSARIAL, 1, epsilon=1.0, label_modification=True)

    def test_describe(self):
        stage = TrainingStage(Objective.SEMANTIC_TARGETED, 3, epsilon=2.5, label_modification=True)

        assert stage.describe() == "semantic_targeted(eps=2.5, LM) x3"


class TestMakeLabel:
    """Test one-hot and label-modified training targets."""

    def test_one_hot(self):
        assert make_label(1, None, False, 4).weights.tolist() == [0, 1, 0, 0]

    def test_target_ignored_without_modification(self):
        assert make_label(1, 3, False, 4).weights.tolist() == [0, 1, 0, 0]

    def test_modified_label_splits_mass(self):
        assert make_label(1, 3, True, 4).weights.tolist() == [0, 0.5, 0, 0.5]

    def test_target_equal_to_true_class(self):
        with pytest.raises(LabelModificationError) as exc_info:
            make_label(2, 2, True, 4)

        assert exc_info.value.true_class == 2


class TestTrainStep:
    """Test one optimisation step under each objective."""

    def _state(self, taxonomy, lr=0.1):
        model = build_reference_net(taxonomy.num_fine, image_size=8, seed=0)
        return TrainState(model, OptimizerConfig(lr=lr, momentum=0.9, weight_decay=0.0))

    def test_standard_step_lowers_loss_on_repeated_batch(self, synthetic_split):
        """Test that repeating one batch drives its loss down."""
        train, _, taxonomy = synthetic_split
        state = self._state(taxonomy)
        batch = _batch(train)
        stage = TrainingStage(Objective.STANDARD, 1)

        losses = [train_step(state, batch, stage, None)[1].loss for _ in range(30)]

        assert losses[-1] < losses[0]
        assert losses[-1] < 0.5 * losses[0]

    def test_adversarial_step_reports_attack(self, synthetic_split):
        train, _, taxonomy = synthetic_split
        state = self._state(taxonomy)
        stage = TrainingStage(Objective.UNTARGETED_ADVERSARIAL, 1, epsilon=0.5)

        _, stats = train_step(state, _batch(train, 6), stage, None, attack_steps=3)

        assert stats.attacked == 6
        assert 0 <= stats.attack_successes <= 6
        assert stats.gradient_evaluations == 18

    def test_semantic_step_needs_targets(self, synthetic_split):
        train, _, taxonomy = synthetic_split
        stage = TrainingStage(Objective.SEMANTIC_TARGETED, 1, epsilon=0.5)

        with pytest.raises(ConfigurationError):
            train_step(self._state(taxonomy), _batch(train, 4), stage, None)

    def test_semantic_step_updates_parameters(self, synthetic_split):
        train, _, taxonomy = synthetic_split
        state = self._state(taxonomy)
        targets = build_target_sets(build_similarity_matrix(taxonomy), k=2)
        stage = TrainingStage(Objective.SEMANTIC_TARGETED, 1, epsilon=0.5, label_modification=True)
        before = parameter_checksum(state.model)

        _, stats = train_step(
            state, _batch(train, 8), stage, targets, rng=np.random.default_rng(1), attack_steps=2
        )

        assert parameter_checksum(state.model) != before
        assert stats.size == 8
        assert np.isfinite(stats.loss)


class TestRunRecipe:
    """Test staged training, checkpoints and reproducibility."""

    def test_two_standard_stages_two_checkpoints(self, synthetic_split):
        train, _, taxonomy = synthetic_split
        recipe = Recipe(
            "two-standard",
            (TrainingStage(Objective.STANDARD, 1), TrainingStage(Objective.STANDARD, 1)),
            NO_AUGMENTATION,
        )
        store = RecordingCheckpoints()

        result = run_recipe(
            recipe, train, taxonomy, None, seed=0,
            model=build_reference_net(4, image_size=8), checkpoints=store,
        )

        assert result.state.epoch == 2
        assert [entry.epoch for entry in result.log] == [1, 2]
        assert [name for name, _, _ in store.saved] == ["epoch-0001", "epoch-0002"]

    def test_periodic_checkpoints_do_not_duplicate_stage_end(self, synthetic_split):
        train, _, taxonomy = synthetic_split
        hyper = TrainingHyperparameters(batch_size=16, lr=0.1, augmentation=None, checkpoint_every=1)
        recipe = Recipe("std", (TrainingStage(Objective.STANDARD, 2),), hyper)
        store = RecordingCheckpoints()

        run_recipe(
            recipe, train, taxonomy, None, seed=0,
            model=build_reference_net(4, image_size=8), checkpoints=store,
        )

        assert [name for name, _, _ in store.saved] == ["epoch-0001", "epoch-0002"]

    def test_same_seed_is_bit_reproducible(self, synthetic_split):
        train, _, taxonomy = synthetic_split
        targets = build_target_sets(build_similarity_matrix(taxonomy), k=2)
        recipe = Recipe(
            "mixed",
            (
                TrainingStage(Objective.SEMANTIC_TARGETED, 1, epsilon=0.5, label_modification=True),
                TrainingStage(Objective.STANDARD, 1),
            ),
            TrainingHyperparameters(batch_size=8, lr=0.1, attack_steps=2),
        )

        def run():
            store = RecordingCheckpoints()
            run_recipe(
                recipe, train, taxonomy, targets, seed=7,
                model=build_reference_net(4, image_size=8, seed=7), checkpoints=store,
            )
            return store.saved

        assert run() == run()

    def test_attack_success_rate_logged_for_adversarial_stages(self, synthetic_split):
        train, _, taxonomy = synthetic_split
        recipe = Recipe(
            "adv",
            (
                TrainingStage(Objective.STANDARD, 1),
                TrainingStage(Objective.UNTARGETED_ADVERSARIAL, 1, epsilon=0.5),
            ),
            NO_AUGMENTATION,
        )

        result = run_recipe(recipe, train, taxonomy, None, seed=1, model=build_reference_net(4, image_size=8))

        assert result.log[0].attack_success_rate is None
        assert 0.0 <= result.log[1].attack_success_rate <= 1.0
        assert result.log[1].gradient_evaluations == len(train) * 2
        assert result.checkpoints == []

    def test_label_space_mismatch(self, synthetic_split):
        train, _, taxonomy = synthetic_split
        recipe = Recipe("std", (TrainingStage(Objective.STANDARD, 1),), NO_AUGMENTATION)

        with pytest.raises(DatasetSpecError) as exc_info:
            run_recipe(recipe, train, taxonomy, None, seed=0, model=build_reference_net(5, image_size=8))

        assert "classes" in str(exc_info.value)

    def test_parameters_carry_across_stage_boundary(self, synthetic_split, monkeypatch):
        """Test that the second stage starts from the parameters the first stage ended with."""
        train, _, taxonomy = synthetic_split
        recipe = Recipe(
            "two-standard",
            (TrainingStage(Objective.STANDARD, 1), TrainingStage(Objective.STANDARD, 1)),
            NO_AUGMENTATION,
        )
        model = build_reference_net(4, image_size=8)
        initial = parameter_checksum(model)
        at_stage_start: list[str] = []
        reset = TrainState.reset_momentum

        def recording_reset(state):
            at_stage_start.append(parameter_checksum(state.model))
            reset(state)

        monkeypatch.setattr(TrainState, "reset_momentum", recording_reset)
        store = RecordingCheckpoints()

        run_recipe(recipe, train, taxonomy, None, seed=0, model=model, checkpoints=store)

        first_stage_end = store.saved[0][2]
        assert at_stage_start == [initial, first_stage_end]
        assert first_stage_end != initial

    def test_semantic_epoch_gradient_evaluations(self, synthetic_split):
        """Test that a semantic targeted epoch costs attack steps times dataset size."""
        train, _, taxonomy = synthetic_split
        targets = build_target_sets(build_similarity_matrix(taxonomy), k=2)
        recipe = Recipe(
            "smt",
            (TrainingStage(Objective.SEMANTIC_TARGETED, 1, epsilon=0.5),),
            TrainingHyperparameters(batch_size=10, lr=0.1, augmentation=None, attack_steps=3),
        )

        result = run_recipe(
            recipe, train, taxonomy, targets, seed=2, model=build_reference_net(4, image_size=8)
        )

        assert result.log[0].gradient_evaluations == 3 * len(train)
