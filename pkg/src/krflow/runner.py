"""Batch pipeline: cohomology analysis, flow runs, parameter sweeps and reports.

Each run owns one output directory holding ``timeseries.csv`` (one row per
sample time, streamed while the flow runs) and ``summary.json``.  A sweep adds
``index.json`` at its root.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__
from . import cohomology as coh
from . import diagnostics as diag
from . import solver
from .config import ConfigError, ScenarioConfig, parse_config, sample_schedule, with_overrides
from .models import CalabiProfile

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_KAEHLER = 2
EXIT_INCONSISTENT = 3

FLOAT_FMT = "%.17g"


def _num(x: float) -> float | str:
    """JSON-safe float: infinities and NaN become strings."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)) or obj is None or isinstance(obj, str):
        return bool(obj) if isinstance(obj, np.bool_) else obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if isinstance(obj, coh.CohClass):
        return [_num(c) for c in obj.coeffs]
    return str(obj)


# ---------------------------------------------------------------------------
# Cohomology-only analysis
# ---------------------------------------------------------------------------

def analyze(config: ScenarioConfig, volume_samples: int = 11) -> dict:
    """T, limit class, K, nef checks and volume-polynomial samples; no PDE."""
    setup = config.setup
    summary = coh.summarize(setup)
    if summary.finite:
        ts = np.linspace(0.0, summary.T, volume_samples)
    else:
        ts = np.linspace(0.0, config.diagnostics.t_end, volume_samples)
    return _jsonable({
        "name": config.name,
        "labels": list(setup.labels),
        "omega0": setup.omega0,
        "c1": setup.c1,
        "T": summary.T,
        "facet_times": list(summary.facet_times),
        "active_facets": list(summary.active_facets),
        "limit_class": summary.limit_class,
        "K": summary.K,
        "mixed_intersections": list(summary.mixed),
        "c1_top": summary.c1_top,
        "nef_w0_plus_c1": {"nef": summary.nef_w0_plus_c1.nef, "margin": summary.nef_w0_plus_c1.margin},
        "limit_interior": summary.limit_interior,
        "regime": summary.regime,
        "volume_samples": [{"t": t, "s": coh.time_rescale(t), "volume": coh.volume_poly(setup, t)} for t in ts],
    })


# ---------------------------------------------------------------------------
# Single run
# ---------------------------------------------------------------------------

@dataclass
class RunSummary:
    name: str
    T: float
    limit_class: list[float]
    K: int
    regime: str
    fit: dict
    verdicts: dict
    runtime: dict
    cohomology: dict = field(default_factory=dict)
    extremes: dict = field(default_factory=dict)
    status: str = "ok"
    exit_code: int = EXIT_OK

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "RunSummary":
        data = dict(data)
        T = data["T"]
        data["T"] = math.inf if T == "inf" else float(T)
        return cls(**data)


def csv_columns(labels: Sequence[str], alphas: Sequence[float]) -> list[str]:
    return (["t", "s"] + [f"class_{lab}" for lab in labels]
            + ["volume_coh", "volume_num", "lambda_min", "lambda_max", "trace_max", "sup_u", "inf_u",
               "sup_udot_u", "inf_udot_u", "metric_ratio_min", "metric_ratio_max"]
            + [f"alpha_integral_{a:g}" for a in alphas])


def csv_row(rec: diag.DiagnosticsRecord, alphas: Sequence[float]) -> list[str]:
    values = ([rec.t, rec.s] + list(rec.class_coords)
              + [rec.volume_coh, rec.volume_num, rec.lambda_min, rec.lambda_max, rec.trace_max, rec.sup_u,
                 rec.inf_u, rec.sup_udot_u, rec.inf_udot_u, rec.metric_ratio_min, rec.metric_ratio_max]
              + [rec.alpha_integrals[float(a)] for a in alphas])
    return [FLOAT_FMT % v for v in values]


def _write_grids(directory: Path, traj: solver.Trajectory) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for i, state in enumerate(traj.states):
        if not isinstance(state, CalabiProfile):
            continue
        data = np.column_stack([state.rho, state.u, state.F1, state.F2])
        np.savetxt(directory / f"grid_{i:04d}.csv", data, fmt=FLOAT_FMT, delimiter=",",
                   header=f"t={state.t!r}\nrho,u,F1,F2", comments="# ")


def run(config: ScenarioConfig, out_dir: str | Path) -> RunSummary:
    """Run the flow, stream diagnostics to ``timeseries.csv`` and write ``summary.json``."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / ".write-test").touch()
        (out_dir / ".write-test").unlink()
    except OSError as exc:
        raise ConfigError(f"output.directory: {out_dir} is not writable ({exc})") from exc
    setup = config.setup
    csum = coh.summarize(setup)
    alphas = config.diagnostics.alpha
    samples = sample_schedule(config)
    formats = config.output.formats
    start = time.perf_counter()

    csv_path = out_dir / "timeseries.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(csv_columns(setup.labels, alphas))
        fh.flush()

        def on_record(rec):
            writer.writerow(csv_row(rec, alphas))
            fh.flush()

        traj = solver.run(config.model, config.solver, samples, alphas,
                          keep_states="grids" in formats, on_record=on_record)
    if "grids" in formats:
        _write_grids(out_dir / "grids", traj)
    elapsed = time.perf_counter() - start

    fit = diag.fit_exponents(traj.records, traj.T, traj.t_stop, config.diagnostics.fit_window)
    verdict = diag.verdicts(traj.records, csum, config.diagnostics.D_threshold,
                            config.diagnostics.blowup_floor, fit)
    if traj.failure is not None:
        status, code = "kaehler_violation", EXIT_KAEHLER
    elif not verdict.consistent:
        status, code = "inconsistent", EXIT_INCONSISTENT
    else:
        status, code = "ok", EXIT_OK
    recs = traj.records
    summary = RunSummary(
        name=config.name,
        T=csum.T,
        limit_class=[float(c) for c in csum.limit_class.coeffs],
        K=csum.K,
        regime=csum.regime,
        fit=fit.to_dict(),
        verdicts=verdict.to_dict(),
        runtime={
            "seconds": elapsed,
            "version": __version__,
            "backend": "product-exact" if traj.is_product else "calabi-implicit" if config.solver.scheme == "implicit"
            else "calabi-explicit",
            "steps": traj.steps,
            "samples": len(recs),
            "t_stop": traj.t_stop,
            "t_last": recs[-1].t if recs else 0.0,
            "completed": traj.completed,
            "failure": traj.failure,
            "solver": asdict(config.solver),
            "N": getattr(config.model, "N", None),
            "L": getattr(config.model, "L", None),
        },
        cohomology=analyze(config),
        extremes={
            "lambda_min": min(r.lambda_min for r in recs),
            "lambda_max": max(r.lambda_max for r in recs),
            "inf_udot_u": min(r.inf_udot_u for r in recs),
            "volume_ratio_min": min(r.volume_num / r.volume_coh for r in recs if r.volume_coh > 0),
            "volume_ratio_max": max(r.volume_num / r.volume_coh for r in recs if r.volume_coh > 0),
        },
        status=status,
        exit_code=code,
    )
    # summary.json is always written; "json" in formats is accepted for symmetry
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info("%s: %s (%.2fs, %d samples)", config.name, status, elapsed, len(recs))
    return summary


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def expand_grid(grid: dict[str, Sequence[Any]]) -> list[dict[str, Any]]:
    """Cartesian product of a parameter grid; an empty grid or an empty axis gives no points."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        return []
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def point_name(base: str, overrides: dict[str, Any]) -> str:
    parts = [f"{key.split('.')[-1]}={value}" for key, value in overrides.items()]
    return "__".join([base] + parts)


def _sweep_point(raw: dict, overrides: dict, out_dir: str, analyze_only: bool) -> dict:
    entry: dict[str, Any] = {"overrides": overrides, "directory": out_dir}
    try:
        point_raw = with_overrides(raw, overrides)
        point_raw["name"] = Path(out_dir).name
        cfg = parse_config(point_raw)
        if analyze_only:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            report = analyze(cfg)
            with open(Path(out_dir) / "analysis.json", "w") as fh:
                json.dump(report, fh, indent=2, sort_keys=True)
            entry.update(status="ok", exit_code=EXIT_OK, T=report["T"], K=report["K"], regime=report["regime"])
        else:
            s = run(cfg, out_dir)
            entry.update(status=s.status, exit_code=s.exit_code, T=_num(s.T), K=s.K, regime=s.regime)
    except ConfigError as exc:
        entry.update(status="config_error", exit_code=EXIT_CONFIG, error=str(exc))
    except Exception as exc:  # isolate per-point failures
        logger.exception("sweep point %s failed", out_dir)
        entry.update(status="error", exit_code=EXIT_CONFIG, error=f"{type(exc).__name__}: {exc}")
    return entry


def sweep(config: ScenarioConfig, grid: dict[str, Sequence[Any]] | None, out_root: str | Path,
          jobs: int = 1, analyze_only: bool = False) -> list[dict]:
    """Run every grid point in its own directory and write ``index.json``."""
    grid = config.sweep if grid is None else grid
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    points = expand_grid(grid)
    dirs = [str(out_root / point_name(config.name, p)) for p in points]
    if jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_sweep_point, config.raw, p, d, analyze_only) for p, d in zip(points, dirs)]
            entries = [f.result() for f in futures]
    else:
        entries = [_sweep_point(config.raw, p, d, analyze_only) for p, d in zip(points, dirs)]
    index = {"name": config.name, "grid": grid, "analyze_only": analyze_only, "entries": entries}
    with open(out_root / "index.json", "w") as fh:
        json.dump(_jsonable(index), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return entries


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

REPORT_COLUMNS = ("scenario", "T", "K", "regime", "K_fit", "lambda_min", "lambda_max", "verdict", "status")


@dataclass
class ReportRow:
    scenario: str
    T: str
    K: str
    regime: str
    K_fit: str
    lambda_min: str
    lambda_max: str
    verdict: str
    status: str
    source: str = ""
    timeseries: str | None = None

    @property
    def failed(self) -> bool:
        return self.status != "ok" or self.verdict not in ("pass",)


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, str):
        return x
    return f"{x:.6g}"


def _row_from_summary(data: dict, source: Path) -> ReportRow:
    fit = data.get("fit") or {}
    kfit = fit.get("K_fit")
    ex = data.get("extremes") or {}
    consistent = (data.get("verdicts") or {}).get("consistent")
    ts = source.parent / "timeseries.csv"
    return ReportRow(
        scenario=data.get("name", source.parent.name),
        T=_fmt(data.get("T")),
        K=_fmt(data.get("K")),
        regime=data.get("regime", "-"),
        K_fit=_fmt(kfit["slope"] if kfit else None),
        lambda_min=_fmt(ex.get("lambda_min")),
        lambda_max=_fmt(ex.get("lambda_max")),
        verdict="pass" if consistent else "FAIL",
        status=data.get("status", "ok"),
        source=str(source),
        timeseries=str(ts) if ts.exists() else None,
    )


def _missing(path: Path, reason: str) -> ReportRow:
    return ReportRow(path.name or str(path), "-", "-", "-", "-", "-", "-", "missing", reason, str(path))


def collect_rows(paths: Iterable[str | Path]) -> list[ReportRow]:
    """Resolve run directories, ``summary.json`` files and sweep ``index.json`` files into rows."""
    rows: list[ReportRow] = []
    for p in map(Path, paths):
        if p.is_dir():
            if (p / "summary.json").exists():
                p = p / "summary.json"
            elif (p / "index.json").exists():
                p = p / "index.json"
            else:
                rows.append(_missing(p, "no summary.json or index.json"))
                continue
        if not p.exists():
            rows.append(_missing(p, "file not found"))
            continue
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            rows.append(_missing(p, f"unreadable: {exc}"))
            continue
        if "entries" in data:
            for entry in data["entries"]:
                d = Path(entry["directory"])
                if (d / "summary.json").exists():
                    rows.extend(collect_rows([d / "summary.json"]))
                else:
                    rows.append(_missing(d, entry.get("error", entry.get("status", "missing"))))
        else:
            rows.append(_row_from_summary(data, p))
    return rows


def format_table(rows: Sequence[ReportRow]) -> str:
    header = list(REPORT_COLUMNS)
    body = [[getattr(r, c) for c in header] for r in rows]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)),
             "  ".join("-" * w for w in widths)]
    for r, vals in zip(rows, body):
        mark = "!!" if r.failed else "  "
        lines.append("  ".join(str(v).ljust(w) for v, w in zip(vals, widths)) + (" " + mark if r.failed else ""))
    return "\n".join(lines)


def report(paths: Iterable[str | Path], out_dir: str | Path | None = None) -> tuple[str, list[ReportRow]]:
    """Digest table over summaries; optionally writes ``report.csv`` and a merged long-format time series."""
    rows = collect_rows(paths)
    table = format_table(rows)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "report.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(REPORT_COLUMNS) + ["source"])
            for r in rows:
                w.writerow([getattr(r, c) for c in REPORT_COLUMNS] + [r.source])
        with open(out_dir / "timeseries_all.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "column", "t", "value"])
            for r in rows:
                if r.timeseries is None:
                    continue
                with open(r.timeseries, newline="") as src:
                    reader = csv.reader(src)
                    cols = next(reader)
                    for line in reader:
                        for c, v in zip(cols[1:], line[1:]):
                            w.writerow([r.scenario, c, line[0], v])
    return table, rows
