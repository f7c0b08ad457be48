import json
import logging
import re
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from app.src.core.config import Settings
from app.src.core.exceptions.system_exceptions import (
    ConfigurationError,
    RunDirectoryError,
)
from app.src.domain.corruption import CorruptionSpec, CorruptionTable, build_corrupted_set
from app.src.domain.datasets import (
    AugmentationConfig,
    Dataset,
    generate_synthetic,
    select_classes,
)
from app.src.domain.metrics import (
    ConditionResult,
    SeverityReport,
    adversarial_sweep,
    compare_models,
    corruption_sweep,
    severity_aggregates,
)
from app.src.domain.model import build_reference_net, parameter_checksum
from app.src.domain.objectives import (
    Objective,
    Recipe,
    TrainingHyperparameters,
    TrainingStage,
    preset,
    run_recipe,
)
from app.src.domain.taxonomy import (
    ClassTaxonomy,
    SemanticTargetSet,
    build_similarity_matrix,
    build_target_sets,
    subset_taxonomy,
)
from app.src.infrastructure.charts import epsilon_sweep_chart, severity_aggregate_chart
from app.src.infrastructure.checkpoint_store import CheckpointStore, load_checkpoint
from app.src.infrastructure.corruption_config import load_corruption_table
from app.src.infrastructure.dataset_store import (
    DatasetStore,
    load_cifar100,
    load_precomputed_corruption_set,
)
from app.src.infrastructure.git.code_version import CodeVersion
from app.src.infrastructure.locking import AtomicFileOperations, RunLock, file_checksum
from app.src.infrastructure.report_store import (
    ReportStore,
    attack_rows_csv,
    comparison_table,
    head_to_head_csv,
    load_reports,
    records_csv,
    training_log_csv,
    win_counts_csv,
)
from app.src.infrastructure.run_directory import RunDirectory
from app.src.infrastructure.taxonomy_store import TaxonomyStore, load_taxonomy
from app.src.models.results import CommandResult
from app.src.models.run_config import RunConfig, RunManifest

logger = logging.getLogger(__name__)

REPORT_GROUPS = ("adversarial", "corruption")


@dataclass(frozen=True)
class DataBundle:
    train: Dataset
    test: Dataset
    taxonomy: ClassTaxonomy
    # hierarchy before any class subset; precomputed corrupted sets use its labels
    source_taxonomy: ClassTaxonomy
    fine_subset: list[int] | None = None


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]+", "-", text).strip("-")


def model_label(checkpoint: Path) -> str:
    """``<run>-<checkpoint>`` for files under ``<run>/checkpoints``, else the stem."""
    if checkpoint.parent.name == "checkpoints":
        return _slug(f"{checkpoint.parent.parent.name}-{checkpoint.stem}")
    return _slug(checkpoint.stem)


class ExperimentService:
    """Runs the subcommands: data, targets, training, evaluation and comparison."""

    def __init__(
        self,
        settings: Settings,
        code_version: CodeVersion,
        corruption_table: CorruptionTable,
        atomic_ops: AtomicFileOperations | None = None,
    ):
        self.settings = settings
        self.code_version = code_version
        self.corruption_table = corruption_table
        self.atomic_ops = atomic_ops or AtomicFileOperations()

    def print_config(self, config: RunConfig) -> str:
        return json.dumps(config.resolved(), indent=2, sort_keys=True)

    def load_data(self, config: RunConfig) -> DataBundle:
        ds_cfg = config.dataset
        fine_subset = ds_cfg.fine_subset
        if ds_cfg.kind == "synthetic":
            s = ds_cfg.synthetic
            params = dict(
                num_classes=s.num_classes,
                image_size=s.image_size,
                seed=s.seed,
                noise=s.noise,
                amplitude=s.amplitude,
            )
            train, taxonomy = generate_synthetic(
                images_per_class=s.train_per_class, split="train", **params
            )
            test, _ = generate_synthetic(
                images_per_class=s.test_per_class, split="test", **params
            )
            if config.taxonomy is not None:
                logger.warning("Synthetic data carries its own hierarchy; ignoring taxonomy")
            source = taxonomy
            fine_subset = None
        else:
            source = self._load_taxonomy(config.taxonomy)
            train = self._load_split(config, "train")
            test = self._load_split(config, "test")
            taxonomy = source
            if fine_subset is not None:
                taxonomy = subset_taxonomy(source, fine_subset)
                train = select_classes(train, fine_subset, taxonomy)
                test = select_classes(test, fine_subset, taxonomy)

        test = self._limit(config, test)
        logger.info(
            "Data ready",
            extra={
                "kind": ds_cfg.kind,
                "train": len(train),
                "test": len(test),
                "classes": taxonomy.num_fine,
            },
        )
        return DataBundle(train, test, taxonomy, source, fine_subset)

    def _load_taxonomy(self, path: Path | None) -> ClassTaxonomy:
        if path is None or not path.is_file():
            raise ConfigurationError(
                message=f"Taxonomy file not found: {path}",
                setting="taxonomy",
            )
        return load_taxonomy(path)

    def _load_split(self, config: RunConfig, split: str) -> Dataset:
        field = f"dataset.{split}_path"
        path = getattr(config.dataset, f"{split}_path")
        if path is None or not path.is_file():
            raise ConfigurationError(message=f"Dataset file not found: {path}", setting=field)
        if config.dataset.kind == "files":
            return DatasetStore(self.atomic_ops).load_dataset(path)
        return load_cifar100(path, split)  # type: ignore[arg-type]

    def _limit(self, config: RunConfig, ds: Dataset) -> Dataset:
        limit = config.dataset.eval_limit
        if limit is None or limit >= len(ds):
            return ds
        return ds.subset(range(limit))

    def build_recipe(self, config: RunConfig) -> Recipe:
        t = config.training
        aug = t.augmentation
        hyper = TrainingHyperparameters(
            lr=t.lr,
            batch_size=t.batch_size,
            momentum=t.momentum,
            weight_decay=t.weight_decay,
            augmentation=(
                AugmentationConfig(
                    crop_padding=aug.crop_padding,
                    hflip_probability=aug.hflip_probability,
                )
                if aug.enabled
                else None
            ),
            attack_steps=t.attack_steps,
            attack_init=t.attack_init,
            checkpoint_every=t.checkpoint_every or self.settings.checkpoint_every,
        )
        r = config.recipe
        if r.stages is not None:
            stages = tuple(
                TrainingStage(
                    objective=s.objective,
                    epochs=s.epochs,
                    epsilon=s.epsilon,
                    label_modification=s.label_modification,
                )
                for s in r.stages
            )
            return Recipe(name=r.display_name, stages=stages, hyperparameters=hyper)

        recipe = preset(
            str(r.preset),
            r.scale,
            desk_factor=self.settings.desk_factor,
            hyperparameters=hyper,
        )
        if r.name:
            recipe = Recipe(name=r.name, stages=recipe.stages, hyperparameters=hyper)
        return recipe

    def _decisions(self, config: RunConfig) -> dict[str, Any]:
        return {
            "attack_init": config.attack.init,
            "training_attack_init": config.training.attack_init,
            "attack_step_size": "2.5 * epsilon / steps",
            "prediction_tie_break": "lowest class index",
            "target_set_tie_break": "ascending class index",
            "target_set_graph": "supplied taxonomy tree",
            "augmentation_splits": ["train"],
            "attack_norm": "l2",
            "attack_batching": "one forward/backward per image; batch equals single runs",
            "augmentation_order": "augment, then attack the augmented image",
            "stage_boundary_momentum": "reset",
            "label_modification_weights": [0.5, 0.5],
            "desk_factor": self.settings.desk_factor,
            "corruption_parameters": self._table(config).to_document(),
            "corruption_seed_rule": "base seed + sample index",
            "absent_metric": "empty CSV field, dash in tables",
        }

    def _table(self, config: RunConfig) -> CorruptionTable:
        if config.corruption.parameters is not None:
            return load_corruption_table(config.corruption.parameters)
        return self.corruption_table

    def _manifest(
        self, command: str, config: RunConfig, inputs: dict[str, str] | None = None
    ) -> RunManifest:
        return RunManifest(
            command=command,
            config=config.resolved(),
            decisions=self._decisions(config),
            code_version=self.code_version.describe(),
            inputs=inputs or {},
        )

    def _targets(self, taxonomy: ClassTaxonomy, config: RunConfig) -> SemanticTargetSet:
        return build_target_sets(build_similarity_matrix(taxonomy), k=config.training.target_k)

    def gen_data(self, config: RunConfig) -> CommandResult:
        out = config.output_dir
        bundle = self.load_data(config)
        with RunLock(out).hold():
            run = RunDirectory(out, self.atomic_ops)
            run.write_manifest(self._manifest("gen-data", config))
            data = DatasetStore(self.atomic_ops)
            artifacts: dict[str, str] = {}
            for split, ds in (("train", bundle.train), ("test", bundle.test)):
                for name, digest in data.save_dataset(ds, out / "data" / f"{split}.json").items():
                    artifacts[f"data/{name}"] = digest
            artifacts["taxonomy.json"] = TaxonomyStore(self.atomic_ops).save_taxonomy(
                bundle.taxonomy, out / "taxonomy.json"
            )
            run.record_artifacts("gen-data", artifacts)
        return CommandResult(
            command="gen-data",
            output_dir=out,
            artifacts=artifacts,
            summary={"train": len(bundle.train), "test": len(bundle.test)},
        )

    def make_targets(self, config: RunConfig) -> CommandResult:
        out = config.output_dir
        bundle = self.load_data(config)
        sim = build_similarity_matrix(bundle.taxonomy)
        targets = build_target_sets(sim, k=config.training.target_k)
        with RunLock(out).hold():
            run = RunDirectory(out, self.atomic_ops)
            run.write_manifest(self._manifest("make-targets", config))
            store = TaxonomyStore(self.atomic_ops)
            artifacts = {
                "similarity.csv": store.export_similarity_csv(sim, out / "similarity.csv"),
                "targets.json": store.save_target_sets(targets, out / "targets.json"),
                "taxonomy.json": store.save_taxonomy(bundle.taxonomy, out / "taxonomy.json"),
            }
            run.record_artifacts("make-targets", artifacts)
        return CommandResult(
            command="make-targets",
            output_dir=out,
            artifacts=artifacts,
            summary={"classes": sim.size, "k": targets.k},
        )

    def train(self, config: RunConfig) -> CommandResult:
        out = config.output_dir
        recipe = self.build_recipe(config)
        bundle = self.load_data(config)
        semantic = any(s.objective == Objective.SEMANTIC_TARGETED for s in recipe.stages)
        targets = self._targets(bundle.taxonomy, config) if semantic else None

        with RunLock(out).hold():
            run = RunDirectory(out, self.atomic_ops)
            run.write_manifest(self._manifest("train", config))
            model = build_reference_net(
                bundle.taxonomy.num_fine,
                image_size=bundle.train.image_shape[1],
                seed=config.seed,
            )
            checkpoints = CheckpointStore(out / "checkpoints", self.atomic_ops)
            logger.info(
                "Training",
                extra={
                    "recipe": recipe.name,
                    "stages": " + ".join(s.describe() for s in recipe.stages),
                },
            )
            result = run_recipe(
                recipe,
                bundle.train,
                bundle.taxonomy,
                targets,
                seed=config.seed,
                model=model,
                checkpoints=checkpoints,
            )
            reports = ReportStore(out, self.atomic_ops)
            reports.write_text("training_log.csv", training_log_csv(result.log))
            artifacts = {f"checkpoints/{k}": v for k, v in checkpoints.written.items()}
            artifacts.update(reports.written)
            run.record_artifacts("train", artifacts)

        return CommandResult(
            command="train",
            output_dir=out,
            artifacts=artifacts,
            summary={
                "recipe": recipe.name,
                "epochs": result.state.epoch,
                "checkpoints": [str(p) for p in result.checkpoints],
                "parameter_checksum": parameter_checksum(result.state.model),
            },
        )

    def _checkpoint_inputs(self, checkpoints: Sequence[Path]) -> dict[str, str]:
        if not checkpoints:
            raise ConfigurationError(
                setting="--checkpoint", detail="Pass at least one --checkpoint"
            )
        labels: dict[str, str] = {}
        for path in checkpoints:
            if not path.is_file():
                raise ConfigurationError(
                    message=f"Checkpoint not found: {path}", setting="--checkpoint"
                )
            label = model_label(path)
            if label in labels:
                label = f"{label}-{len(labels)}"
            labels[label] = str(path)
        return labels

    def eval_adv(self, config: RunConfig, checkpoints: Sequence[Path]) -> CommandResult:
        out = config.output_dir
        labels = self._checkpoint_inputs(checkpoints)
        bundle = self.load_data(config)
        sim = build_similarity_matrix(bundle.taxonomy)

        with RunLock(out).hold():
            run = RunDirectory(out, self.atomic_ops)
            inputs = {label: file_checksum(Path(p)) for label, p in labels.items()}
            run.write_manifest(self._manifest("eval-adv", config, inputs))
            store = ReportStore(out, self.atomic_ops)
            by_model: dict[str, list[SeverityReport]] = {}
            for label, path in labels.items():
                state = load_checkpoint(Path(path))
                reports = adversarial_sweep(
                    state.model,
                    bundle.test,
                    bundle.taxonomy,
                    config.attack.epsilons,
                    sim=sim,
                    steps=config.attack.steps,
                    init=config.attack.init,
                    seed=config.seed,
                    on_condition=self._condition_writer(store, label),
                )
                store.write_reports(f"adversarial--{label}", label, reports)
                by_model[label] = reports
            store.write_bytes("epsilon-sweep.svg", epsilon_sweep_chart(by_model))
            run.record_artifacts("eval-adv", store.written)

        return CommandResult(
            command="eval-adv",
            output_dir=out,
            artifacts=store.written,
            summary={"models": list(by_model), "conditions": len(config.attack.epsilons)},
        )

    def _condition_writer(self, store: ReportStore, label: str):
        def write(result: ConditionResult) -> None:
            slug = _slug(result.condition.key)
            store.write_text(f"records/{label}/{slug}.csv", records_csv(result.records))
            if result.attack_rows:
                store.write_text(
                    f"attacks/{label}/{slug}.csv", attack_rows_csv(result.attack_rows)
                )

        return write

    def corrupted_sets(self, config: RunConfig, bundle: DataBundle) -> list[Dataset]:
        table = self._table(config)
        c = config.corruption
        sets = [
            build_corrupted_set(bundle.test, CorruptionSpec(kind, severity, c.seed), table)
            for kind in c.kinds
            for severity in c.severities
        ]
        for manifest in c.precomputed:
            for ds in load_precomputed_corruption_set(manifest, bundle.source_taxonomy):
                if bundle.fine_subset is not None:
                    ds = select_classes(ds, bundle.fine_subset, bundle.taxonomy)
                sets.append(self._limit(config, ds))
        if not sets:
            raise ConfigurationError(
                setting="corruption", detail="No corruption kinds or precomputed sets"
            )
        return sets

    def eval_corrupt(self, config: RunConfig, checkpoints: Sequence[Path]) -> CommandResult:
        out = config.output_dir
        labels = self._checkpoint_inputs(checkpoints)
        bundle = self.load_data(config)
        sim = build_similarity_matrix(bundle.taxonomy)
        sets = self.corrupted_sets(config, bundle)

        with RunLock(out).hold():
            run = RunDirectory(out, self.atomic_ops)
            inputs = {label: file_checksum(Path(p)) for label, p in labels.items()}
            run.write_manifest(self._manifest("eval-corrupt", config, inputs))
            store = ReportStore(out, self.atomic_ops)
            aggregates = {}
            for label, path in labels.items():
                state = load_checkpoint(Path(path))
                grid = corruption_sweep(
                    state.model,
                    sets,
                    bundle.taxonomy,
                    sim=sim,
                    on_condition=self._condition_writer(store, label),
                )
                store.write_reports(
                    f"corruption--{label}", label, grid.reports, grid.aggregates
                )
                aggregates[label] = grid.aggregates
            store.write_bytes("severity-aggregate.svg", severity_aggregate_chart(aggregates))
            run.record_artifacts("eval-corrupt", store.written)

        return CommandResult(
            command="eval-corrupt",
            output_dir=out,
            artifacts=store.written,
            summary={"models": list(aggregates), "conditions": len(sets)},
        )

    def _collect_reports(
        self, result_dirs: Sequence[Path]
    ) -> dict[str, dict[str, list[SeverityReport]]]:
        groups: dict[str, dict[str, list[SeverityReport]]] = {g: {} for g in REPORT_GROUPS}
        models: list[str] = []
        for directory in result_dirs:
            found = False
            for group in REPORT_GROUPS:
                for path in sorted(directory.glob(f"{group}--*.json")):
                    name, reports = load_reports(path)
                    label = name if name not in groups[group] else f"{directory.name}:{name}"
                    groups[group][label] = reports
                    if label not in models:
                        models.append(label)
                    found = True
            if not found:
                raise RunDirectoryError(
                    message=f"{directory} holds no evaluation reports",
                    path=str(directory),
                    operation="read",
                )
        # a model evaluated in one group only surfaces as a grid mismatch
        for group, by_model in groups.items():
            if by_model:
                for label in models:
                    by_model.setdefault(label, [])
        return {g: {m: by_model[m] for m in models} for g, by_model in groups.items() if by_model}

    def report(self, config: RunConfig, result_dirs: Sequence[Path]) -> CommandResult:
        if not result_dirs:
            raise ConfigurationError(setting="report", detail="Pass at least one result directory")
        out = config.output_dir
        groups = self._collect_reports(result_dirs)
        comparisons = {group: compare_models(by_model) for group, by_model in groups.items()}

        with RunLock(out).hold():
            run = RunDirectory(out, self.atomic_ops)
            inputs = {
                f"{path.parent.name}/{path.name}": file_checksum(path)
                for directory in result_dirs
                for group in REPORT_GROUPS
                for path in sorted(directory.glob(f"{group}--*.json"))
            }
            run.write_manifest(self._manifest("report", config, inputs))
            store = ReportStore(out, self.atomic_ops)
            for group, comparison in comparisons.items():
                by_model = groups[group]
                store.write_text(
                    f"comparison-{group}.txt", comparison_table(comparison, by_model)
                )
                store.write_text(f"wins-{group}.csv", win_counts_csv(comparison))
                store.write_text(f"head-to-head-{group}.csv", head_to_head_csv(comparison))
                if group == "adversarial":
                    store.write_bytes("epsilon-sweep.svg", epsilon_sweep_chart(by_model))
                else:
                    store.write_bytes(
                        "severity-aggregate.svg",
                        severity_aggregate_chart(
                            {m: severity_aggregates(r) for m, r in by_model.items()}
                        ),
                    )
            run.record_artifacts("report", store.written)

        return CommandResult(
            command="report",
            output_dir=out,
            artifacts=store.written,
            summary={
                group: {"models": list(c.models), "conditions": c.conditions}
                for group, c in comparisons.items()
            },
        )
