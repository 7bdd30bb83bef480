"""Command line interface: ``tssl-snn <command> ...``."""

import argparse
import logging
import sys
from typing import Optional, Sequence

from .run import run_experiments
from .snn.network import build_network, layer_table
from .tasks.evaluation import EvalConfig
from .tasks.gradcheck import GRADCHECK_CASES, GradcheckConfig
from .tasks.sparsity import SparsityConfig
from .tasks.training import RunConfig

__all__ = ["main", "build_parser"]

logger = logging.getLogger(__name__)


def _shape(text: str) -> tuple:
    return tuple(int(s) for s in text.replace("x", ",").split(",") if s)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tssl-snn",
        description="Train and inspect spiking networks with firing-time backpropagation.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level",
    )
    parser.add_argument(
        "--output-dir", default="./results", help="Shared output directory for all tasks"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Train a network from a run config file")
    p.add_argument("--config", required=True, help="Sectioned TOML run config")
    p.add_argument("--seed", type=int, default=None, help="Override [train] seed")
    p.add_argument(
        "--serial",
        action="store_true",
        help="One worker, one thread, deterministic algorithms",
    )

    p = sub.add_parser("eval", help="Evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None, help="Dataset directory")
    p.add_argument("--config", default=None, help="Run config the checkpoint was trained with")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--samples", type=int, default=None, help="Evaluate the first N samples")
    p.add_argument("--batch-size", type=int, default=64)

    p = sub.add_parser("gradcheck", help="Check the backward pass against independent oracles")
    p.add_argument("--case", default="all", choices=list(GRADCHECK_CASES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=1000, help="Random rasters for phi")
    p.add_argument("--circuits", type=int, default=20, help="Random circuits for shift")

    p = sub.add_parser("sparsity", help="Firing-count histogram of a trained network")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--data", default=None, help="Dataset directory")
    p.add_argument("--config", default=None, help="Run config the checkpoint was trained with")
    p.add_argument("--batch-size", type=int, default=64)

    p = sub.add_parser("arch-parse", help="Print the resolved layer shapes of an architecture")
    p.add_argument("architecture", help='e.g. "28x28-15C5-P2-40C5-P2-300-10"')
    p.add_argument(
        "--input-shape", type=_shape, default=None, help='Per-sample input, e.g. "1,28,28"'
    )

    return parser


def _train(args) -> int:
    config = RunConfig.from_file(args.config, seed=args.seed, serial=args.serial or None)
    (result,) = run_experiments(
        [config],
        shared_output_dir=args.output_dir,
        generate_comparisons=False,
        ignore_existing_files=True,
    )
    if len(result.metrics):
        last = result.metrics.iloc[-1]
        print(
            f"{result.run_name}: epoch {int(last['epoch'])}, "
            f"train loss {last['train_loss']:.4f}, test accuracy {last['test_acc']:.4f}"
        )
    print(f"checkpoint: {result.checkpoint}")
    return 0


def _eval(args) -> int:
    config = EvalConfig(
        checkpoint=args.checkpoint,
        data_dir=args.data,
        run_config=args.config,
        split=args.split,
        n_samples=args.samples,
        batch_size=args.batch_size,
    )
    (result,) = run_experiments(
        [config],
        shared_output_dir=args.output_dir,
        generate_comparisons=False,
        ignore_existing_files=True,
    )
    print(
        f"accuracy {result.accuracy:.4f}  loss {result.loss:.4f}  "
        f"samples {result.n_samples}"
    )
    return 0


def _gradcheck(args) -> int:
    config = GradcheckConfig(
        case=args.case,
        seed=args.seed,
        n_instances=args.instances,
        n_circuits=args.circuits,
    )
    (report,) = run_experiments(
        [config],
        shared_output_dir=args.output_dir,
        generate_comparisons=False,
        ignore_existing_files=True,
    )
    print(report.to_text(), end="")
    return 0 if report.passed else 1


def _sparsity(args) -> int:
    config = SparsityConfig(
        checkpoint=args.checkpoint,
        data_dir=args.data,
        run_config=args.config,
        n_samples=args.samples,
        batch_size=args.batch_size,
    )
    (report,) = run_experiments(
        [config],
        shared_output_dir=args.output_dir,
        generate_comparisons=False,
        ignore_existing_files=True,
    )
    table = report.to_frame().pivot(index="spikes", columns="layer", values="fraction")
    print(table.to_string(float_format=lambda x: f"{x:.4f}"))
    print(f"silent overall: {100.0 * report.silent_fraction():.1f}%")
    return 0


def _arch_parse(args) -> int:
    net = build_network(args.architecture, input_shape=args.input_shape)
    print(f"input: {tuple(net.input_shape)}")
    print(layer_table(net).to_string(index=False))
    return 0


_COMMANDS = {
    "train": _train,
    "eval": _eval,
    "gradcheck": _gradcheck,
    "sparsity": _sparsity,
    "arch-parse": _arch_parse,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError) as e:
        logger.debug("command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
