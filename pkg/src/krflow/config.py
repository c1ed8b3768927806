"""Scenario configuration: TOML files with a fixed, versioned schema.

Schema version 1::

    schema_version = 1
    name = "f1-contract"

    [model]                 # type = "calabi": a, b, L, N
    type = "calabi"         # type = "product": kappa, c0, labels
    a = 1.0
    b = 4.0

    [solver]                # any SolverConfig field
    dt = 1e-3

    [diagnostics]
    alpha = [0.25, 0.5, 1.0]
    D_threshold = 10.0      # optional; default 10 |lambda_min(0)|
    blowup_floor = -10.0
    sample_dt = 0.05
    t_end = 10.0            # only used when T is infinite
    fit_window = 0.1
    sample_times = [...]    # optional explicit schedule

    [output]
    directory = "runs/f1-contract"
    formats = ["csv", "json"]   # add "grids" for per-sample profile dumps

    [sweep]                 # optional parameter grid, dotted keys
    "model.b" = [3.5, 4.0, 4.5]
"""
from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import cohomology as coh
from .diagnostics import DEFAULT_ALPHAS, DEFAULT_BLOWUP_FLOOR
from .models import CalabiModel, ModelError, ProductModel
from .solver import SolverConfig

SCHEMA_VERSION = 1
FORMATS = ("csv", "json", "grids")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DiagnosticsConfig:
    alpha: tuple[float, ...] = DEFAULT_ALPHAS
    D_threshold: float | None = None
    blowup_floor: float = DEFAULT_BLOWUP_FLOOR
    sample_dt: float = 0.05
    t_end: float = 10.0
    fit_window: float = 0.1
    sample_times: tuple[float, ...] | None = None


@dataclass(frozen=True)
class OutputConfig:
    directory: str | None = None
    formats: tuple[str, ...] = ("csv", "json")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    model: CalabiModel | ProductModel
    solver: SolverConfig
    diagnostics: DiagnosticsConfig
    output: OutputConfig
    sweep: dict[str, list] = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def setup(self) -> coh.CohomologySetup:
        return self.model.setup()


_FLOAT = "float"
_INT = "int"
_STR = "str"
_FLOATS = "list[float]"
_STRS = "list[str]"

_SCHEMA = {
    "model.calabi": {"type": _STR, "a": _FLOAT, "b": _FLOAT, "L": _FLOAT, "N": _INT},
    "model.product": {"type": _STR, "kappa": _FLOATS, "c0": _FLOATS, "labels": _STRS},
    "solver": {"dt": _FLOAT, "delta_stop": _FLOAT, "newton_tol": _FLOAT, "newton_max_iters": _INT,
               "kaehler_floor": _FLOAT, "scheme": _STR, "max_halvings": _INT},
    "diagnostics": {"alpha": _FLOATS, "D_threshold": _FLOAT, "blowup_floor": _FLOAT, "sample_dt": _FLOAT,
                    "t_end": _FLOAT, "fit_window": _FLOAT, "sample_times": _FLOATS},
    "output": {"directory": _STR, "formats": _STRS},
}


def _check(path: str, value: Any, kind: str):
    def is_num(x):
        return isinstance(x, (int, float)) and not isinstance(x, bool)

    if kind == _FLOAT:
        if not is_num(value) or not math.isfinite(value):
            raise ConfigError(f"{path}: expected a finite number, got {value!r}")
        return float(value)
    if kind == _INT:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if kind == _STR:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if kind == _FLOATS:
        if not isinstance(value, list) or not all(is_num(x) and math.isfinite(x) for x in value):
            raise ConfigError(f"{path}: expected a list of numbers, got {value!r}")
        return [float(x) for x in value]
    if kind == _STRS:
        if not isinstance(value, list) or not all(isinstance(x, str) for x in value):
            raise ConfigError(f"{path}: expected a list of strings, got {value!r}")
        return list(value)
    raise AssertionError(kind)


def _section(raw: dict, name: str, schema_key: str | None = None) -> dict:
    block = raw.get(name, {})
    if not isinstance(block, dict):
        raise ConfigError(f"{name}: expected a table")
    schema = _SCHEMA[schema_key or name]
    out = {}
    for key, value in block.items():
        if key not in schema:
            raise ConfigError(f"{name}.{key}: unknown key (allowed: {', '.join(sorted(schema))})")
        out[key] = _check(f"{name}.{key}", value, schema[key])
    return out


def parse_config(raw: dict, source: str = "<config>") -> ScenarioConfig:
    """Validate a decoded TOML document and build the typed configuration."""
    raw = copy.deepcopy(raw)
    known = {"schema_version", "name", "model", "solver", "diagnostics", "output", "sweep"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{key}: unknown top-level key")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        raise ConfigError("name: expected a non-empty string")

    model_raw = raw.get("model")
    if not isinstance(model_raw, dict) or "type" not in model_raw:
        raise ConfigError("model.type: required (calabi | product)")
    mtype = model_raw["type"]
    if mtype not in ("calabi", "product"):
        raise ConfigError(f"model.type: unknown model type {mtype!r} (calabi | product)")
    m = _section(raw, "model", f"model.{mtype}")
    try:
        if mtype == "calabi":
            for key in ("a", "b"):
                if key not in m:
                    raise ConfigError(f"model.{key}: required for calabi models")
            model = CalabiModel(m["a"], m["b"], m.get("L", 15.0), m.get("N", 2048))
        else:
            for key in ("kappa", "c0"):
                if key not in m:
                    raise ConfigError(f"model.{key}: required for product models")
            model = ProductModel(tuple(m["kappa"]), tuple(m["c0"]), tuple(m.get("labels", ())))
        setup = model.setup()
        sing = coh.singularity_time(setup)
    except (ModelError, coh.CohomologyError) as exc:
        raise ConfigError(f"model: {exc}") from exc

    s = _section(raw, "solver")
    try:
        solver = SolverConfig(**s)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver: {exc}") from exc

    d = _section(raw, "diagnostics")
    if "alpha" in d:
        if not d["alpha"] or not all(0 < x <= 1 for x in d["alpha"]):
            raise ConfigError("diagnostics.alpha: values must lie in (0, 1]")
        d["alpha"] = tuple(d["alpha"])
    for key in ("sample_dt", "t_end", "fit_window"):
        if key in d and not d[key] > 0:
            raise ConfigError(f"diagnostics.{key}: must be > 0")
    if "D_threshold" in d and not d["D_threshold"] >= 0:
        raise ConfigError("diagnostics.D_threshold: must be >= 0")
    if "sample_times" in d:
        t_stop = sing.T - solver.delta_stop if math.isfinite(sing.T) else math.inf
        st = d["sample_times"]
        if any(x < 0 or x > t_stop + 1e-12 for x in st):
            raise ConfigError(f"diagnostics.sample_times: must lie in [0, T - delta_stop] = [0, {t_stop:.10g}]")
        if not math.isfinite(sing.T) and not st:
            raise ConfigError("diagnostics.sample_times: empty schedule for an infinite-time run")
        d["sample_times"] = tuple(sorted(set(st)))
    diagnostics = DiagnosticsConfig(**d)

    o = _section(raw, "output")
    if "formats" in o:
        bad = [f for f in o["formats"] if f not in FORMATS]
        if bad:
            raise ConfigError(f"output.formats: unknown formats {bad} (allowed: {', '.join(FORMATS)})")
        o["formats"] = tuple(o["formats"])
    output = OutputConfig(**o)

    sweep = raw.get("sweep", {})
    if not isinstance(sweep, dict):
        raise ConfigError("sweep: expected a table")
    for key, values in sweep.items():
        if not isinstance(values, list):
            raise ConfigError(f"sweep.{key}: expected a list of values")
        _lookup_path(raw, key)
    return ScenarioConfig(name, model, solver, diagnostics, output, dict(sweep), raw)


def _lookup_path(raw: dict, dotted: str):
    section, _, key = dotted.partition(".")
    if not key or section not in ("model", "solver", "diagnostics", "output"):
        raise ConfigError(f"sweep key {dotted!r}: expected <section>.<key>")
    return section, key


def with_overrides(raw: dict, overrides: dict[str, Any]) -> dict:
    out = copy.deepcopy(raw)
    for dotted, value in overrides.items():
        section, key = _lookup_path(out, dotted)
        out.setdefault(section, {})[key] = value
    out.pop("sweep", None)
    return out


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(raw, str(path))


def bundled_scenarios() -> list[str]:
    files = resources.files("krflow").joinpath("scenarios")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".toml"))


def load_scenario(name: str) -> ScenarioConfig:
    res = resources.files("krflow").joinpath("scenarios", f"{name}.toml")
    if not res.is_file():
        raise ConfigError(f"unknown scenario {name!r} (bundled: {', '.join(bundled_scenarios())})")
    return parse_config(tomllib.loads(res.read_text()), f"scenario:{name}")


def parse_value(text: str) -> Any:
    """Parse a command-line value with TOML scalar syntax (bare words become strings)."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def sample_schedule(config: ScenarioConfig) -> list[float]:
    """Sample times: uniform ``sample_dt`` spacing plus ``T - {5,2,1} 10^-j`` points down to ``T - delta_stop``."""
    d = config.diagnostics
    if d.sample_times is not None:
        return sorted(set(d.sample_times) | {0.0})
    T = coh.singularity_time(config.setup).T
    if not math.isfinite(T):
        k = int(math.floor(d.t_end / d.sample_dt + 1e-9))
        return sorted(set([i * d.sample_dt for i in range(k + 1)] + [d.t_end]))
    delta = config.solver.delta_stop
    near = []
    j = 1
    while 10.0 ** -j >= delta * (1 - 1e-12):
        for mult in (5, 2, 1):
            gap = mult * 10.0 ** -j
            if delta * (1 - 1e-12) <= gap <= d.fit_window * (1 + 1e-12):
                near.append(T - gap)
        j += 1
    near.append(T - delta)
    start = T - max(d.fit_window, 10 * delta)
    k = int(math.floor(start / d.sample_dt))
    uniform = [i * d.sample_dt for i in range(k + 1) if i * d.sample_dt < start - 1e-9]
    return sorted(set(uniform + [t for t in near if t > 0]))
