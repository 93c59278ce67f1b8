import sys
from argparse import ArgumentParser
from typing import List, Optional

from cli.commands import cmd_ablate, cmd_eval, cmd_gen, cmd_plot, cmd_sweep_xi, cmd_train
from cli.experiment import DEFAULT_CONFIG, ExperimentSpec
from common.config_reader import ConfigError
from common.logger import get_logger, setup_logger, stop_logger
from detector.checkpoint import CheckpointMismatchError
from training.trainer import TrainingDivergedError

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="uadan", description="Uncertainty-aware domain adaptation lab")

    common = ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", type=str, default=DEFAULT_CONFIG)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--xi", type=float, default=None)
    common.add_argument("--mode", type=str, default=None)
    common.add_argument("--iters", type=int, default=None, help="total iterations, both lr phases rescaled")
    common.add_argument("--out", "-o", type=str, default=None, help="output root")
    common.add_argument("--workers", type=int, default=None, help="parallel grid processes")

    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="generate the synthetic benchmark")
    gen.add_argument("--force", action="store_true", default=False)

    train = sub.add_parser("train", parents=[common], help="train one run")
    train.add_argument("--resume", action="store_true", default=False)

    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    ev.add_argument("checkpoint", type=str)
    ev.add_argument("dataset_dir", type=str, nargs="?", default=None)
    ev.add_argument("--compare", type=str, default=None, help="source-only detections JSON")

    sub.add_parser("ablate", parents=[common], help="all ablation modes over the seed list")
    sub.add_parser("sweep-xi", parents=[common], help="UaDAN over the xi grid and seed list")

    plot = sub.add_parser("plot", parents=[common], help="loss curves of finished runs")
    plot.add_argument("runs", type=str, nargs="*")

    return parser


def run(args) -> None:
    spec = ExperimentSpec.from_file(
        args.config,
        seed=args.seed,
        xi=args.xi,
        mode=args.mode,
        iters=args.iters,
        out=args.out,
        workers=args.workers,
    )
    logger = setup_logger(spec.output_root / "logs" / "uadan.log", console=True)
    logger.info(f"uadan {args.command} with {spec.config_path or 'built-in defaults'} -> {spec.output_root}")

    if args.command == "gen":
        cmd_gen(spec, force=args.force)
    elif args.command == "train":
        cmd_train(spec, resume=args.resume)
    elif args.command == "eval":
        cmd_eval(spec, args.checkpoint, args.dataset_dir, compare=args.compare)
    elif args.command == "ablate":
        cmd_ablate(spec)
    elif args.command == "sweep-xi":
        cmd_sweep_xi(spec)
    elif args.command == "plot":
        cmd_plot(spec, args.runs)
    else:
        raise ValueError(f"Unknown command: {args.command}")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except TrainingDivergedError as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, CheckpointMismatchError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        get_logger().exception("Unexpected failure")
        print(f"error: unexpected {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_UNEXPECTED
    finally:
        stop_logger()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
