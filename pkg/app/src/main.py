import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

import torch

from app.src.core.config import get_settings
from app.src.core.dependencies import get_experiment_service
from app.src.core.exceptions.base_exceptions import EXIT_SUCCESS
from app.src.core.exceptions.exception_handlers import handle_cli_exception
from app.src.core.exceptions.system_exceptions import ConfigurationError
from app.src.core.logging import setup_logging
from app.src.domain.objectives import PRESET_NAMES, Scale
from app.src.models.run_config import RunConfig, apply_overrides, load_run_config

logger = logging.getLogger(__name__)

COMMANDS = (
    "train",
    "eval-adv",
    "eval-corrupt",
    "report",
    "make-targets",
    "gen-data",
    "print-config",
)


class _Parser(argparse.ArgumentParser):
    # usage errors share exit code 1 with configuration errors
    def error(self, message: str):  # type: ignore[override]
        raise ConfigurationError(
            message=f"{self.prog}: {message}", setting="command line"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="sevtrain",
        description="Semantically targeted adversarial training and mistake-severity evaluation",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Run configuration (JSON)")
    common.add_argument("--out", type=Path, help="Output directory")
    common.add_argument("--seed", type=int, help="Seed (unsigned 64-bit)")
    common.add_argument("--preset", choices=PRESET_NAMES, help="Named training recipe")
    common.add_argument("--scale", choices=[s.value for s in Scale], help="full-length or desk-scaled epochs")

    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for command in COMMANDS:
        cmd = sub.add_parser(command, parents=[common])
        if command in ("eval-adv", "eval-corrupt"):
            cmd.add_argument(
                "--checkpoint",
                type=Path,
                action="append",
                default=[],
                help="Checkpoint metadata file; repeat to compare models",
            )
        if command == "report":
            cmd.add_argument("result_dirs", type=Path, nargs="+", help="Evaluation output dirs")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config)
    return apply_overrides(
        config,
        seed=args.seed,
        preset=args.preset,
        scale=args.scale,
        output_dir=args.out,
    )


def run(argv: Sequence[str] | None = None) -> int:
    settings = get_settings()
    args = build_parser().parse_args(argv)
    if settings.threads is not None:
        torch.set_num_threads(settings.threads)

    config = resolve_config(args)

    service = get_experiment_service()
    if args.command == "print-config":
        sys.stdout.write(service.print_config(config) + "\n")
        return EXIT_SUCCESS

    if args.command == "train":
        result = service.train(config)
    elif args.command == "eval-adv":
        result = service.eval_adv(config, args.checkpoint)
    elif args.command == "eval-corrupt":
        result = service.eval_corrupt(config, args.checkpoint)
    elif args.command == "report":
        result = service.report(config, args.result_dirs)
    elif args.command == "make-targets":
        result = service.make_targets(config)
    else:
        result = service.gen_data(config)

    sys.stdout.write(result.model_dump_json(indent=2) + "\n")
    return EXIT_SUCCESS


def main(argv: Sequence[str] | None = None) -> int:
    setup_logging(get_settings().log_level)
    try:
        return run(argv)
    except Exception as e:
        return handle_cli_exception(e)


if __name__ == "__main__":
    sys.exit(main())
