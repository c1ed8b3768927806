"""Implicit time stepping for the Calabi-reduced scalar flow.

The potential equation on the rho grid reads

    du/dt = log(F'F'' / (F0'F0'')) - u,     F = chi_t + u,

with homogeneous Neumann conditions at rho = -L, L.  Backward Euler gives the
nodal system ``r_i = (1 + dt) u+_i - u_i - dt LR_i(u+) = 0``.  LR only sees u
through its increments ``d_j = u_{j+1} - u_j``, so differencing neighbouring
rows yields a closed tridiagonal system in ``d`` and the anchor ``u+_0``
follows from row 0 alone.  The two formulations have the same solution; the
increment form avoids cancellation where F'' ~ e^{-L}.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded

from . import cohomology as coh
from . import diagnostics as diag
from .models import (CalabiModel, CalabiProfile, KaehlerViolation, Potential, ProductModel,
                     calabi_background, calabi_initial_potential, nodal_derivatives, product_state)

logger = logging.getLogger(__name__)

MAX_BACKTRACK = 40


class NewtonFailure(RuntimeError):
    pass


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    delta_stop: float = 1e-3
    newton_tol: float = 1e-10
    newton_max_iters: int = 30
    kaehler_floor: float = 1e-12
    scheme: str = "implicit"
    max_halvings: int = 10

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not self.delta_stop > 0:
            raise ValueError(f"delta_stop must be > 0, got {self.delta_stop}")
        if not self.kaehler_floor > 0:
            raise ValueError(f"kaehler_floor must be > 0, got {self.kaehler_floor}")
        if not self.newton_tol > 0 or self.newton_max_iters < 1:
            raise ValueError("newton_tol must be > 0 and newton_max_iters >= 1")
        if self.scheme not in ("implicit", "explicit"):
            raise ValueError(f"scheme must be 'implicit' or 'explicit', got {self.scheme!r}")


@dataclass
class Trajectory:
    model: CalabiModel | ProductModel
    config: SolverConfig
    T: float
    t_stop: float
    times: list[float] = field(default_factory=list)
    states: list[Any] = field(default_factory=list)
    records: list[diag.DiagnosticsRecord] = field(default_factory=list)
    failure: dict | None = None
    steps: int = 0

    @property
    def completed(self) -> bool:
        return self.failure is None

    @property
    def is_product(self) -> bool:
        return isinstance(self.model, ProductModel)


def _log_ratio(d: np.ndarray, chi: Potential, logF0: np.ndarray, h: float):
    d1, d2 = nodal_derivatives(d, h)
    Fp = chi.F1 + d1
    Fpp = chi.F2 + d2
    with np.errstate(invalid="ignore", divide="ignore"):
        lr = np.log(Fp) + np.log(Fpp) - logF0
    return lr, Fp, Fpp


def _admissible(Fp: np.ndarray, Fpp: np.ndarray) -> bool:
    return bool(np.all(Fp > 0) and np.all(Fpp > 0))


def _jacobian_bands(Fp: np.ndarray, Fpp: np.ndarray, h: float, dt: float) -> np.ndarray:
    """Banded Jacobian of the differenced residual ``q_j = r_{j+1} - r_j`` in ``d``."""
    N = Fp.shape[0]
    a_ = 1.0 / (2.0 * h * Fp)
    b_ = 1.0 / (h * h * Fpp)
    A = a_ - b_                    # dLR_i / dd_{i-1}
    B = a_ + b_                    # dLR_i / dd_i
    B[0] = 2.0 / (h * h * Fpp[0])
    A[-1] = -2.0 / (h * h * Fpp[-1])
    m = N - 1
    ab = np.zeros((3, m))
    ab[1] = (1.0 + dt) - dt * (A[1:] - B[:-1])
    ab[0, 1:] = -dt * B[1:m]       # dq_j / dd_{j+1}
    ab[2, :-1] = dt * A[1:m]       # dq_{j+1} / dd_j
    return ab


def _newton(profile: CalabiProfile, dt: float, chi: Potential, logF0: np.ndarray, config: SolverConfig,
            t_next: float) -> np.ndarray:
    h = profile.model.h
    du = profile.du
    d = du.copy()
    lr, Fp, Fpp = _log_ratio(d, chi, logF0, h)
    if chi.F1[0] <= 0 or chi.F1[-1] <= 0:
        # boundary slopes are the class coordinates: the class has left the cone
        i = 0 if chi.F1[0] <= 0 else len(Fp) - 1
        raise KaehlerViolation(t_next, i, float(profile.rho[i]), float(chi.F1[i]), "F'")
    if not _admissible(Fp, Fpp):
        # old increments against the new background: the step is too long
        raise NewtonFailure(f"initial guess not admissible at t={t_next:.10g}")
    for it in range(config.newton_max_iters + 1):
        q = (1.0 + dt) * d - du - dt * np.diff(lr)
        res = float(np.max(np.abs(np.cumsum(q)))) if q.size else 0.0
        if res <= config.newton_tol:
            return d
        if it == config.newton_max_iters:
            break
        delta = solve_banded((1, 1), _jacobian_bands(Fp, Fpp, h, dt), -q, check_finite=False)
        lam = 1.0
        for _ in range(MAX_BACKTRACK):
            cand = d + lam * delta
            lr_c, Fp_c, Fpp_c = _log_ratio(cand, chi, logF0, h)
            if _admissible(Fp_c, Fpp_c) and np.all(np.isfinite(lr_c)):
                break
            lam *= 0.5
        else:
            i = int(np.argmin(Fpp_c))
            raise KaehlerViolation(t_next, i, float(profile.rho[i]), float(Fpp_c[i]))
        d, lr, Fp, Fpp = cand, lr_c, Fp_c, Fpp_c
    raise NewtonFailure(f"Newton did not converge in {config.newton_max_iters} iterations at t={t_next:.10g} "
                        f"(residual {res:.3e})")


def _single_step(profile: CalabiProfile, t_next: float, config: SolverConfig,
                 background: Potential | None) -> CalabiProfile:
    model = profile.model
    dt = t_next - profile.t
    chi = calabi_background(model, t_next) if background is None else background
    F0 = profile.initial_potential
    logF0 = np.log(F0.F1) + np.log(F0.F2)
    h = model.h
    if config.scheme == "explicit":
        chi_old = calabi_background(model, profile.t) if background is None else background
        lr, _, _ = _log_ratio(profile.du, chi_old, logF0, h)
        d = profile.du + dt * (np.diff(lr) - profile.du)
        u0 = profile.u[0] + dt * (lr[0] - profile.u[0])
    else:
        d = _newton(profile, dt, chi, logF0, config, t_next)
        lr, _, _ = _log_ratio(d, chi, logF0, h)
        u0 = (profile.u[0] + dt * lr[0]) / (1.0 + dt)
    new = CalabiProfile.from_increments(model, t_next, u0, d)
    if background is not None:
        object.__setattr__(new, "background", background)
    object.__setattr__(new, "udot", (new.u - profile.u) / dt)
    if not (np.all(np.isfinite(new.u)) and np.all(np.isfinite(new.F2))):
        i = int(np.argmax(~np.isfinite(new.F2)))
        raise KaehlerViolation(t_next, i, float(new.rho[i]), float("nan"))
    new.check_kaehler(config.kaehler_floor)
    return new


def step(profile: CalabiProfile, t_next: float, config: SolverConfig | None = None,
         background: Potential | None = None) -> CalabiProfile:
    """Advance ``profile`` to ``t_next`` with one backward-Euler step.

    If Newton fails the interval is split in halves recursively (at most
    ``config.max_halvings`` levels).  ``background`` replaces ``chi_{t_next}``
    and is only meant for testing the scalar-ODE reduction.
    """
    config = config or SolverConfig()
    if not t_next > profile.t:
        raise SolverError(f"t_next={t_next} must exceed current time {profile.t}")
    return _step_with_halving(profile, t_next, config, background, 0)


def _step_with_halving(profile, t_next, config, background, level):
    try:
        return _single_step(profile, t_next, config, background)
    except NewtonFailure:
        if level >= config.max_halvings:
            raise
        logger.debug("Newton failure at t=%.10g, halving (level %d)", t_next, level + 1)
        mid = profile.t + 0.5 * (t_next - profile.t)
        half = _step_with_halving(profile, mid, config, background, level + 1)
        return _step_with_halving(half, t_next, config, background, level + 1)


def step_times(t_stop: float, dt: float, samples: Sequence[float]) -> np.ndarray:
    """Breakpoints ``k dt`` merged with the sample times, ending exactly at ``t_stop``."""
    k = int(math.floor(t_stop / dt + 1e-9))
    grid = np.arange(1, k + 1) * dt
    pts = np.unique(np.concatenate([grid, np.asarray([s for s in samples if s > 0]), [t_stop]]))
    pts = pts[pts <= t_stop]
    keep = [0.0]
    sample_set = set(float(s) for s in samples) | {float(t_stop)}
    for p in pts:
        p = float(p)
        if p - keep[-1] < 1e-6 * dt:
            if p in sample_set and keep[-1] != 0.0:
                keep[-1] = p
            continue
        keep.append(p)
    return np.asarray(keep[1:])


def _stop_time(model, config: SolverConfig, samples: Sequence[float],
               t_end: float | None = None) -> tuple[float, float]:
    setup = model.setup()
    T = coh.singularity_time(setup).T
    if t_end is not None:
        if not t_end > 0:
            raise SolverError(f"t_end must be > 0, got {t_end}")
        if t_end > T - config.delta_stop:
            raise SolverError(f"t_end={t_end} beyond T - delta_stop = {T - config.delta_stop}")
        return T, float(t_end)
    if math.isinf(T):
        if not samples:
            raise SolverError("infinite singular time requires explicit sample times")
        return T, float(max(samples))
    return T, T - config.delta_stop


def run(model: CalabiModel | ProductModel, config: SolverConfig | None = None,
        sample_times: Sequence[float] = (), alphas: Sequence[float] = diag.DEFAULT_ALPHAS,
        keep_states: bool = True, on_record: Callable[[diag.DiagnosticsRecord], None] | None = None,
        t_end: float | None = None) -> Trajectory:
    """Integrate the flow from t=0, recording diagnostics at ``sample_times``.

    Product models are evaluated in closed form.  Calabi models are stepped to
    ``T - delta_stop`` (never past it), or to ``t_end`` if given.  A Kähler
    violation ends the run early and is recorded in ``trajectory.failure``.
    """
    config = config or SolverConfig()
    setup = model.setup()
    T, t_stop = _stop_time(model, config, sample_times, t_end)
    samples = sorted(set(float(s) for s in sample_times) | {0.0})
    if samples[-1] > t_stop + 1e-12:
        raise SolverError(f"sample time {samples[-1]} beyond stop time {t_stop}")
    traj = Trajectory(model, config, T, t_stop)

    def emit(state):
        rec = diag.make_record(state, model, setup, alphas)
        traj.times.append(float(state.t))
        if keep_states:
            traj.states.append(state)
        traj.records.append(rec)
        if on_record is not None:
            on_record(rec)

    if isinstance(model, ProductModel):
        for s in samples:
            emit(product_state(model, s))
        return traj

    profile = CalabiProfile.initial(model)
    emit(profile)
    sample_set = set(samples)
    try:
        for t_next in step_times(t_stop, config.dt, samples):
            profile = step(profile, float(t_next), config)
            traj.steps += 1
            if float(t_next) in sample_set:
                emit(profile)
    except (KaehlerViolation, NewtonFailure) as exc:
        kind = "kaehler_violation" if isinstance(exc, KaehlerViolation) else "newton_failure"
        traj.failure = {"kind": kind, "t": float(getattr(exc, "t", profile.t)), "last_t": float(profile.t),
                        "message": str(exc)}
        if isinstance(exc, KaehlerViolation):
            traj.failure.update(rho=exc.rho, node=exc.index, value=exc.value)
        logger.warning("run stopped: %s", exc)
    return traj


@dataclass
class AuditReport:
    times: list[float]
    differences: list[list[float]]
    ratios: list[float]
    orders: list[float]
    unstable: bool
    failures: list[dict | None]

    @property
    def min_ratio(self) -> float:
        return min(self.ratios) if self.ratios else math.nan


def _restrict(state: CalabiProfile, factor: int) -> np.ndarray:
    return state.u[::factor]


def time_step_audit(*trajectories: Trajectory) -> AuditReport:
    """Compare u across a refinement sequence (each grid nests the previous one).

    ``differences[k][i]`` is the sup-norm gap between levels k and k+1 at the
    i-th common sample time; ``ratios`` divide consecutive gaps and ``orders``
    are their base-2 logs.  A failed trajectory marks the sequence unstable.
    """
    if len(trajectories) < 2:
        raise ValueError("need at least two trajectories")
    failures = [tr.failure for tr in trajectories]
    if any(f is not None for f in failures):
        return AuditReport([], [], [], [], True, failures)
    times = trajectories[0].times
    for tr in trajectories[1:]:
        if tr.times != times:
            raise ValueError("trajectories have mismatched sample times")
    diffs = []
    for coarse, fine in zip(trajectories, trajectories[1:]):
        Nc, Nf = coarse.model.N, fine.model.N
        if (Nf - 1) % (Nc - 1) or coarse.model.L != fine.model.L:
            raise ValueError(f"grid with N={Nf} does not nest N={Nc}")
        factor = (Nf - 1) // (Nc - 1)
        diffs.append([float(np.max(np.abs(_restrict(sf, factor) - sc.u)))
                      for sc, sf in zip(coarse.states, fine.states)])
    ratios, orders = [], []
    for e1, e2 in zip(diffs, diffs[1:]):
        for x, y in zip(e1, e2):
            if y > 0:
                ratios.append(x / y)
                orders.append(math.log2(x / y) if x > 0 else -math.inf)
    return AuditReport(list(times), diffs, ratios, orders, False, failures)
