"""Command-line interface: ``krflow {analyze,run,sweep,report,list}``.

Exit codes: 0 success, 1 configuration error, 2 Kähler violation before
T - delta_stop, 3 verdict inconsistency.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from . import runner
from .config import ConfigError, ScenarioConfig, bundled_scenarios, load_config, load_scenario, parse_value

OUT_ENV = "KRFLOW_OUT"

logger = logging.getLogger("krflow")


def _load(args) -> ScenarioConfig:
    if bool(args.config) == bool(args.scenario):
        raise ConfigError("exactly one of --config or --scenario is required")
    return load_config(args.config) if args.config else load_scenario(args.scenario)


def output_dir(config: ScenarioConfig, explicit: str | None) -> Path:
    """--out, then $KRFLOW_OUT/<name>, then output.directory, then runs/<name>."""
    if explicit:
        return Path(explicit)
    root = os.environ.get(OUT_ENV)
    if root:
        return Path(root) / config.name
    if config.output.directory:
        return Path(config.output.directory)
    return Path("runs") / config.name


def parse_params(items: list[str]) -> dict[str, list]:
    grid: dict[str, list] = {}
    for item in items:
        key, sep, values = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--param {item!r}: expected <section>.<key>=v1,v2,...")
        grid[key.strip()] = [parse_value(v.strip()) for v in values.split(",") if v.strip()]
    return grid


def _add_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="scenario TOML file")
    p.add_argument("--scenario", help="bundled scenario name (see `krflow list`)")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<name> or output.directory)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="krflow", description="Kähler-Ricci flow on symmetric model manifolds.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="cohomology-only analysis (no PDE)")
    _add_source(p)

    p = sub.add_parser("run", help="run the flow and write timeseries.csv and summary.json")
    _add_source(p)

    p = sub.add_parser("sweep", help="run a parameter grid, one directory per point plus index.json")
    _add_source(p)
    p.add_argument("--param", action="append", default=[], metavar="KEY=V1,V2",
                   help="grid axis, e.g. model.b=3.5,4,4.5 (repeatable; overrides the [sweep] table)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--analyze-only", action="store_true", help="cohomology analysis per point, no PDE")

    p = sub.add_parser("report", help="digest table over run directories, summaries or sweep indexes")
    p.add_argument("paths", nargs="+")
    p.add_argument("--out", help="also write report.csv and timeseries_all.csv here")

    sub.add_parser("list", help="list bundled scenarios")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list":
            for name in bundled_scenarios():
                print(name)
            return runner.EXIT_OK
        if args.command == "report":
            table, rows = runner.report(args.paths, args.out)
            print(table)
            return runner.EXIT_INCONSISTENT if any(r.failed for r in rows) else runner.EXIT_OK
        config = _load(args)
        if args.command == "analyze":
            result = runner.analyze(config)
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                (out / "analysis.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
            print(json.dumps(result, indent=2, sort_keys=True))
            return runner.EXIT_OK
        if args.command == "run":
            out = output_dir(config, args.out)
            summary = runner.run(config, out)
            print(f"{config.name}: {summary.status} (T={summary.T:.12g}, K={summary.K}, regime={summary.regime}) -> {out}")
            if summary.verdicts["violated"]:
                print(f"violated implications: {', '.join(summary.verdicts['violated'])}", file=sys.stderr)
            return summary.exit_code
        if args.command == "sweep":
            if args.jobs < 1:
                raise ConfigError("--jobs must be >= 1")
            grid = parse_params(args.param) if args.param else None
            out = output_dir(config, args.out)
            entries = runner.sweep(config, grid, out, args.jobs, args.analyze_only)
            for e in entries:
                print(f"{Path(e['directory']).name}: {e['status']}")
            print(f"{len(entries)} point(s) -> {out / 'index.json'}")
            return max((e["exit_code"] for e in entries), default=runner.EXIT_OK)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return runner.EXIT_CONFIG
    return runner.EXIT_OK  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
