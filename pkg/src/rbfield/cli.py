"""Command-line entry points.

Subcommands: ``offline`` (build and persist a reduced basis), ``run`` (any
configured experiment), ``summarize`` (print summary.json files).  Exit
codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import json
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigError, NumericalError
from .experiments import run_experiment


def _add_common(p):
    p.add_argument("--config", required=True, help="TOML config file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--threads", type=int, default=None, help="override worker count")
    p.add_argument("--out", default=None, help="override the output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbfield")
    sub = parser.add_subparsers(dest="command", required=True)

    p_off = sub.add_parser("offline", help="build and persist the reduced basis")
    _add_common(p_off)

    p_run = sub.add_parser("run", help="run the configured experiment")
    _add_common(p_run)

    p_sum = sub.add_parser("summarize", help="print run summaries")
    p_sum.add_argument("dirs", nargs="+", help="run directories with summary.json")
    return parser


def _configured(args, force_experiment=None):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out is not None:
        cfg.out_dir = args.out
    if force_experiment is not None:
        cfg.experiment = force_experiment
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "summarize":
            for d in args.dirs:
                path = Path(d) / "summary.json"
                if not path.exists():
                    print(f"{d}: no summary.json")
                    continue
                summary = json.loads(path.read_text())
                head = ", ".join(
                    f"{k}={summary[k]}" for k in sorted(summary)
                    if isinstance(summary[k], (int, float, str)))
                print(f"{d}: {head}")
            return 0
        cfg = _configured(args, "offline" if args.command == "offline" else None)
        run_experiment(cfg)
        return 0
    except ConfigError as exc:
        for line in exc.violations:
            print(f"config error: {line}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
