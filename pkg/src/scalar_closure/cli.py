"""Command-line experiment runner (``scalar-closure`` console script).

Usage
-----
``scalar-closure <experiment> [--config FILE] [--seed N] [--out DIR]``
    Run one experiment, write CSV artifacts plus ``manifest.yaml`` into
    the output directory, and print the check summary.
``scalar-closure report --out DIR``
    Re-audit a finished run from its manifest without recomputing.

Exit codes: 0 all checks passed, 2 invalid configuration (nothing
written), 3 tolerance failure (artifacts written; stderr names the
violated checks).

The YAML configuration file may set ``experiment``, ``base_seed``,
``out`` and a ``params`` mapping; command-line flags override the file.
``SCALAR_CLOSURE_THREADS`` caps the linear-algebra thread pools and is
the only environment variable consulted.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import yaml

from .closure import ClosureSolverError
from .experiments import (EXPERIMENTS, ExperimentConfig, ExperimentError,
                          render_report, report, run)
from .feynman_kac import TransportMCError

_CONFIG_KEYS = ("experiment", "base_seed", "out", "params")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scalar-closure",
        description="Deterministic experiments for the closure library.")
    parser.add_argument("experiment", choices=EXPERIMENTS + ("report",),
                        help="experiment to run, or 'report' to audit a run")
    parser.add_argument("--config", metavar="FILE", default=None,
                        help="YAML configuration file")
    parser.add_argument("--seed", metavar="N", type=int, default=None,
                        help="base seed (default 0; overrides the config file)")
    parser.add_argument("--out", metavar="DIR", default=None,
                        help="output directory (default runs/<experiment>)")
    return parser


def _apply_thread_cap() -> None:
    cap = os.environ.get("SCALAR_CLOSURE_THREADS")
    if not cap:
        return
    if not cap.isdigit() or int(cap) < 1:
        raise ExperimentError("SCALAR_CLOSURE_THREADS must be a positive integer")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = cap


def _load_config_file(path: str) -> dict:
    fpath = Path(path)
    if not fpath.is_file():
        raise ExperimentError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(fpath.read_text())
    except yaml.YAMLError as exc:
        raise ExperimentError(f"config file is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ExperimentError("config file must hold a YAML mapping")
    unknown = sorted(set(data) - set(_CONFIG_KEYS))
    if unknown:
        raise ExperimentError(f"unknown config key(s): {', '.join(unknown)}")
    if "params" in data and data["params"] is not None and not isinstance(data["params"], dict):
        raise ExperimentError("config 'params' must be a mapping")
    return data


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Merge the config file with command-line overrides."""
    data = _load_config_file(args.config) if args.config else {}
    if "experiment" in data and data["experiment"] != args.experiment:
        raise ExperimentError(
            f"config file names experiment {data['experiment']!r} but the "
            f"command line asks for {args.experiment!r}")
    seed = args.seed if args.seed is not None else data.get("base_seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ExperimentError("base_seed must be an integer")
    out = args.out if args.out is not None else data.get("out", "")
    return ExperimentConfig(experiment=args.experiment,
                            params=dict(data.get("params") or {}),
                            base_seed=seed, out_dir=out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_thread_cap()
        if args.experiment == "report":
            if args.config is not None or args.seed is not None:
                raise ExperimentError("report takes only --out")
            text, ok = report(args.out if args.out is not None else ".")
            sys.stdout.write(text)
            return 0 if ok else 3
        config = resolve_config(args)
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        manifest = run(config)
    except (ValueError, ClosureSolverError, TransportMCError) as exc:
        # configuration-class failures surfaced by the library layers,
        # including solver refusals (window too small, budget too coarse)
        print(f"error: {exc}", file=sys.stderr)
        return 2

    sys.stdout.write(render_report(manifest))
    if not manifest.all_passed:
        failed = ", ".join(row.name for row in manifest.checks if not row.passed)
        print(f"tolerance failure: {failed}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
