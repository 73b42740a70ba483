"""
HCCI LSTM-NMPC Toolchain.

This module is the single command-line entry point of the toolchain. Every stage
of the workflow is a subcommand, and each one writes its artifacts (with the
config snapshot that produced them) into its own directory under the configured
output directory:

- **gen-data**: Run the synthetic plant under randomised excitation and save the
  closed-chain dataset.
- **train**: Fit the LSTM surrogate with truncated BPTT and save its weights and
  accuracy report.
- **eval**: Score saved weights against the dataset.
- **closed-loop**: Run plant and NMPC controller in one process over the step
  reference profile.
- **bench**: Time repeated solves against the per-cycle compute budget.
- **plant-node** / **controller-node**: Run the two halves of the loop as UDP
  peers.
- **report**: Convert a run directory into figure tables, a workbook and charts.

Module Functions:
- `configure_logging(verbosity)`: Sets the root logger level and format.
- `build_parser()`: Builds the argparse parser with one subparser per stage.
- `main(argv)`: Parses arguments, resolves the config and dispatches.

Usage:
    python src/App.py gen-data --preset default
    python src/App.py train --set training.max_epochs=50
    python src/App.py closed-loop --preset nox300 -v
"""

import argparse
import logging
import sys

from commands import bench, closed_loop, evaluate, gen_data, nodes, report, train
from lstm_nmpc.config import load_config
from lstm_nmpc.errors import NmpcError

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

COMMANDS = {
    "gen-data": (gen_data.main, "generate the closed-chain training dataset"),
    "train": (train.main, "train the LSTM surrogate"),
    "eval": (evaluate.main, "report model accuracy on the dataset"),
    "closed-loop": (closed_loop.main, "run the in-process closed loop"),
    "bench": (bench.main, "benchmark solve times"),
    "plant-node": (nodes.plant_main, "run the plant side of the split loop"),
    "controller-node": (nodes.controller_main, "run the controller side of the split loop"),
    "report": (report.main, "write figure tables, workbook and charts for a run"),
}


def configure_logging(verbosity: int = 1):
    """Configure the root logger: 0 errors only, 1 info, 2 or more debug."""
    if verbosity <= 0:
        level = logging.ERROR
    elif verbosity == 1:
        level = logging.INFO
    else:
        level = logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def build_parser():
    """Build the command-line parser."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--preset", help="preset name under config/ (default, nox300)")
    common.add_argument("--seed", type=int, help="seed for data, training, plant and loss injection")
    common.add_argument("--output-dir", help="root directory of all artifacts")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable)",
    )
    common.add_argument("-v", "--verbose", action="count", default=1, help="more logging")
    common.add_argument("-q", "--quiet", action="store_true", help="errors only")

    parser = argparse.ArgumentParser(prog="App.py", description=__doc__.splitlines()[1])
    subparsers = parser.add_subparsers(dest="command", required=True)
    parsers = {
        name: subparsers.add_parser(name, parents=[common], help=text)
        for name, (_, text) in COMMANDS.items()
    }
    parsers["bench"].add_argument("--n-solves", type=int, default=1000)
    parsers["bench"].add_argument(
        "--cold", action="store_true", help="also run the paired cold-start benchmark"
    )
    parsers["controller-node"].add_argument(
        "--idle-timeout", type=float, default=None, help="stop after this many idle seconds"
    )
    parsers["report"].add_argument(
        "--run-dir", help="run directory (default: <output-dir>/closed_loop)"
    )
    return parser


def _overrides(args) -> list:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides += [f"seed={args.seed}", f"training.seed={args.seed}", f"plant.seed={args.seed}"]
    if args.output_dir:
        overrides.append(f"output_dir={args.output_dir}")
    return overrides


def main(argv=None) -> int:
    """Parse arguments, resolve the config and run one subcommand."""
    args = build_parser().parse_args(argv)
    configure_logging(0 if args.quiet else args.verbose)
    try:
        config = load_config(args.config, args.preset, _overrides(args))
        run, _ = COMMANDS[args.command]
        run(config, args)
    except NmpcError as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
