"""Command-line entry point.

``run`` executes a seeded experiment matrix from a config file; ``plot``
renders the aggregate tables as SVG charts.  Exit codes: 0 success,
1 partial failure (some cell produced no trials), 2 invalid configuration.
"""

import argparse
import sys

from .experiment import ConfigError, load_experiment_config, plot_aggregates, run_matrix


def build_parser():
    parser = argparse.ArgumentParser(
        prog="resilient-tracking",
        description="Distributed multi-target tracking experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run an experiment matrix")
    run_p.add_argument("--config", required=True, help="experiment config file")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--workers", type=int, default=1)
    run_p.add_argument(
        "--seed", type=int, default=None, help="override base_seed"
    )
    plot_p = sub.add_parser("plot", help="render charts from aggregates")
    plot_p.add_argument("--in", dest="in_dir", required=True)
    plot_p.add_argument("--out", dest="out_dir", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        try:
            matrix = load_experiment_config(args.config)
            if args.seed is not None:
                matrix.base_seed = args.seed
            matrix.validate()
        except (ConfigError, ValueError, OSError) as exc:
            print(f"invalid configuration: {exc}", file=sys.stderr)
            return 2
        report = run_matrix(matrix, args.out, workers=args.workers)
        return 1 if report["failed_cells"] else 0
    if args.command == "plot":
        try:
            written = plot_aggregates(args.in_dir, args.out_dir)
        except (ConfigError, OSError) as exc:
            print(f"plot failed: {exc}", file=sys.stderr)
            return 2
        for path in written:
            print(path)
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
