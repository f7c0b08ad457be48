"""Report clean vs. severity-5 accuracy per corruption kind for one checkpoint.

Used to pin app/src/infrastructure/corruption_settings.yaml: each kind's
severity-5 parameter is tuned until the printed ratio sits near 0.5.
"""

import argparse
import json
import sys
from pathlib import Path

from app.src.core.dependencies import get_experiment_service
from app.src.core.logging import setup_logging
from app.src.domain.corruption import CorruptionKind, CorruptionSpec, build_corrupted_set
from app.src.domain.metrics import evaluate
from app.src.infrastructure.checkpoint_store import load_checkpoint
from app.src.infrastructure.corruption_config import load_corruption_table
from app.src.models.run_config import load_run_config


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", type=Path, help="Run configuration (JSON)")
    parser.add_argument("--checkpoint", type=Path, required=True)
    parser.add_argument("--severity", type=int, default=5)
    args = parser.parse_args()

    setup_logging("WARNING")
    service = get_experiment_service()
    config = load_run_config(args.config)
    bundle = service.load_data(config)
    model = load_checkpoint(args.checkpoint).model
    table = (
        load_corruption_table(config.corruption.parameters)
        if config.corruption.parameters is not None
        else service.corruption_table
    )

    def accuracy(ds) -> float:
        records = evaluate(model, ds, bundle.taxonomy)
        return sum(r.pred_fine == r.true_fine for r in records) / len(records)

    clean = accuracy(bundle.test)
    rows = {}
    for kind in CorruptionKind:
        spec = CorruptionSpec(kind, args.severity, seed=config.corruption.seed)
        corrupted = accuracy(build_corrupted_set(bundle.test, spec, table))
        rows[kind.value] = {
            "parameter": table.value(kind, args.severity),
            "accuracy": corrupted,
            "ratio": corrupted / clean if clean else None,
        }
    json.dump({"clean": clean, "severity": args.severity, "kinds": rows}, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
