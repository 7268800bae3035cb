"""Command line: ``foliated-marcus run <config> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import EXPERIMENTS, ConfigError, load_config
from .parallel import WORKERS_ENV, resolve_workers
from .runner import run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="foliated-marcus", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiments of a config file")
    r.add_argument("config", type=Path, help="TOML experiment config")
    r.add_argument("--workers", type=int, default=None, help=f"worker processes (fallback: ${WORKERS_ENV})")
    r.add_argument("--out", type=Path, default=None, help="output directory (default: config output_dir)")
    r.add_argument("--seed", type=int, default=None, help="override the master seed")
    r.add_argument("--experiment", choices=EXPERIMENTS, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("field 'seed': out of range")
            cfg = replace(cfg, seed=args.seed)
        workers = resolve_workers(args.workers, cfg.workers)
    except (ConfigError, ValueError) as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return 2
    out = args.out if args.out is not None else Path(cfg.output_dir)
    try:
        code = run(cfg, out, workers=workers, experiment=args.experiment)
    except OSError as exc:
        print(json.dumps({"error": "resource", "message": str(exc)}), file=sys.stderr)
        return 3
    if code != 0:
        failures = json.loads((out / "diagnostics.json").read_text())["failures"]
        print(json.dumps({"error": "check", "failures": failures}), file=sys.stderr)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
