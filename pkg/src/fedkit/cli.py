"""fedrun: validate experiments, run federations, compare traces, serve the hub.

Exit codes: 0 clean, 2 validation/configuration errors, 3 runtime fault.
``compare`` returns 1 when the metric exceeds tolerance.  FEDRUN_LOG sets
the log level (DEBUG/INFO/WARNING/ERROR).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .compare import compare, load_trace
from .errors import FedkitError, GridMismatch, SchemaError
from .experiment import load_experiment, load_sites, validate_layers
from .sync import run_experiment

log = logging.getLogger("fedrun")


def _setup_logging() -> None:
    level = os.environ.get("FEDRUN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _load(path: str, sites: str | None):
    registry = load_sites(sites) if sites else None
    return load_experiment(path, registry)


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        exp = _load(args.experiment, args.sites)
    except SchemaError as exc:
        if args.json:
            print(json.dumps({"valid": False, "schema_error": str(exc)}))
        else:
            print(f"schema error: {exc}", file=sys.stderr)
        return 2
    report = validate_layers(exp)
    print(json.dumps(report.to_dict(), indent=2) if args.json else report.to_text())
    return 0 if report.ok else 2


def cmd_run(args: argparse.Namespace) -> int:
    try:
        exp = _load(args.experiment, args.sites)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    report = validate_layers(exp)
    if not report.ok:
        print(report.to_text(), file=sys.stderr)
        if not args.force:
            return 2
        log.warning("running an invalid experiment under --force")
    try:
        result = run_experiment(exp, mode=args.mode, seed=args.seed)
    except FedkitError as exc:
        print(f"runtime fault: {exc}", file=sys.stderr)
        return 3
    out_dir = Path(args.out) if args.out else Path(f"{Path(args.experiment).stem}-out")
    written = result.export(out_dir)
    for name, path in sorted(written.items()):
        print(f"{name}: {path}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    try:
        result = compare(
            load_trace(args.trace_a),
            load_trace(args.trace_b),
            metric=args.metric,
            tolerance=args.tol,
            topic_glob=args.topic,
        )
    except GridMismatch as exc:
        print(f"grid mismatch: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result.to_dict(), indent=2))
    return 0 if result.passed else 1


def cmd_serve(args: argparse.Namespace) -> int:
    try:
        registry = load_sites(args.sites)
    except (OSError, SchemaError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    host, _, port = args.listen.rpartition(":")
    try:
        port_num = int(port)
    except ValueError:
        print(f"config error: bad listen address {args.listen!r}", file=sys.stderr)
        return 2
    from .server import serve

    try:
        serve(registry, host or "127.0.0.1", port_num, console_dir=args.console)
    except OSError as exc:
        print(f"bind error: {exc}", file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedrun", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="five-layer experiment validation")
    p_validate.add_argument("experiment")
    p_validate.add_argument("--json", action="store_true", help="emit the report as JSON")
    p_validate.add_argument("--sites", help="external sites registry (sites.json)")
    p_validate.set_defaults(func=cmd_validate)

    p_run = sub.add_parser("run", help="run a federation locally")
    p_run.add_argument("experiment")
    p_run.add_argument("--mode", choices=["conservative", "best_effort", "waveform_relaxation"])
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out", help="artifact directory (default <exp>-out)")
    p_run.add_argument("--force", action="store_true", help="run even with validation errors")
    p_run.add_argument("--sites", help="external sites registry (sites.json)")
    p_run.set_defaults(func=cmd_run)

    p_compare = sub.add_parser("compare", help="compare two trace CSVs")
    p_compare.add_argument("trace_a")
    p_compare.add_argument("trace_b")
    p_compare.add_argument("--metric", choices=["rms", "linf"], default="rms")
    p_compare.add_argument("--tol", type=float, required=True)
    p_compare.add_argument("--topic", default="*", help="topic glob filter")
    p_compare.set_defaults(func=cmd_compare)

    p_serve = sub.add_parser("serve", help="run the hub daemon")
    p_serve.add_argument("--sites", required=True)
    p_serve.add_argument("--listen", default="127.0.0.1:8080")
    p_serve.add_argument("--console", help="directory of built console assets", default=None)
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
