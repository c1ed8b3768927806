"""Curvature, potential and volume monitors, exponent fits and consistency verdicts."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import integrate

from . import cohomology as coh
from .models import (CalabiModel, CalabiProfile, ProductModel, ProductState, grid_volume,
                     log_ma_ratio, product_ricci_eigs, ricci_potential_initial)

DEFAULT_ALPHAS = (0.25, 0.5, 1.0)
DEFAULT_BLOWUP_FLOOR = -10.0
RICCI_D1_TOL = 1e-9


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    s: float
    class_coords: tuple[float, ...]
    volume_coh: float
    volume_num: float
    lambda_min: float
    lambda_max: float
    trace_max: float
    sup_u: float
    inf_u: float
    sup_udot_u: float
    inf_udot_u: float
    metric_ratio_min: float
    metric_ratio_max: float
    alpha_integrals: Mapping[float, float] = field(default_factory=dict)


class RicciEigs:
    """Ricci-endomorphism eigenvalue fields of a Calabi profile on interior nodes."""

    def __init__(self, tangential: np.ndarray, radial: np.ndarray, index: np.ndarray):
        self.tangential = tangential
        self.radial = radial
        self.index = index

    @property
    def lambda_min(self) -> float:
        return float(min(self.tangential.min(), self.radial.min()))

    @property
    def lambda_max(self) -> float:
        return float(max(self.tangential.max(), self.radial.max()))

    @property
    def trace_max(self) -> float:
        return float(np.max(self.tangential + self.radial))

    def __iter__(self):
        return iter((self.lambda_min, self.lambda_max, self.trace_max))


def centered_derivatives(f: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivatives on nodes 1..N-2.

    Fourth-order centered stencils where five points fit, second-order
    centered stencils on the two nodes next to the boundary.
    """
    d1 = np.empty(f.size - 2)
    d2 = np.empty(f.size - 2)
    d1[:] = (f[2:] - f[:-2]) / (2 * h)
    d2[:] = (f[2:] - 2 * f[1:-1] + f[:-2]) / (h * h)
    if f.size >= 5:
        d1[1:-1] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
        d2[1:-1] = (-f[:-4] + 16 * f[1:-3] - 30 * f[2:-2] + 16 * f[3:-1] - f[4:]) / (12 * h * h)
    return d1, d2


def ricci_eigs_calabi(profile: CalabiProfile) -> RicciEigs:
    """Eigenvalues ``R'/F'`` (fiber-sphere directions) and ``R''/F''`` (radial).

    ``R = 2 rho - log(F'F'')`` is split as ``-P - v`` with ``P`` the Ricci
    potential of the initial metric (closed form) and ``v = log(F'F''/(F0'F0''))``.
    Only ``v`` is differenced, which keeps the radial eigenvalue accurate where
    F'' is of order e^{-L}.
    """
    v = log_ma_ratio(profile)
    P = ricci_potential_initial(profile.model)
    v1, v2 = centered_derivatives(v, profile.model.h)
    R1 = -P.F1[1:-1] - v1
    R2 = -P.F2[1:-1] - v2
    tangential = R1 / profile.F1[1:-1]
    radial = R2 / profile.F2[1:-1]
    return RicciEigs(tangential, radial, np.arange(1, v.size - 1))


def ricci_eigs_product(model: ProductModel, state: ProductState) -> tuple[float, float, float]:
    eigs = np.asarray(model.kappas) / state.coeffs
    return float(eigs.min()), float(eigs.max()), float(eigs.sum())


def metric_comparison(state, model=None) -> tuple[float, float]:
    """Eigenvalue extremes of the flow metric measured against the initial metric."""
    if isinstance(state, CalabiProfile):
        F0 = state.initial_potential
        r1 = state.F1 / F0.F1
        r2 = state.F2 / F0.F2
        return float(min(r1.min(), r2.min())), float(max(r1.max(), r2.max()))
    ratios = state.coeffs / np.asarray(model.c0)
    return float(ratios.min()), float(ratios.max())


def initial_volume(model) -> float:
    """``int w0^n`` in cohomological normalization."""
    if isinstance(model, CalabiModel):
        return model.b ** 2 - model.a ** 2
    return math.factorial(model.n) * float(np.prod(model.c0))


def alpha_integral(state, alpha: float, model=None) -> float:
    """``int exp(alpha (sup(-v) + v)) w0^n`` with ``v = du/dt + u``."""
    if not (0 < alpha <= 1):
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if isinstance(state, CalabiProfile):
        v = log_ma_ratio(state)
        F0 = state.initial_potential
        w = np.exp(alpha * (v - v.min())) * F0.F1 * F0.F2
        return 2.0 * float(integrate.trapezoid(w, state.rho))
    # v is constant in space on products, so the exponent vanishes
    return initial_volume(model)


def make_record(state, model, setup: coh.CohomologySetup, alphas: Sequence[float] = DEFAULT_ALPHAS) -> DiagnosticsRecord:
    t = float(state.t)
    cls = coh.class_at(setup, t)
    volume_coh = coh.top_intersection(setup.tensor, [cls] * setup.n)
    mr_min, mr_max = metric_comparison(state, model)
    if isinstance(state, CalabiProfile):
        v = log_ma_ratio(state)
        lam_min, lam_max, trace_max = ricci_eigs_calabi(state)
        volume_num = 2.0 * grid_volume(state)
        u = state.u
        sup_u, inf_u = float(u.max()), float(u.min())
        sup_v, inf_v = float(v.max()), float(v.min())
    else:
        lam_min, lam_max, trace_max = ricci_eigs_product(model, state)
        volume_num = math.factorial(model.n) * float(np.prod(state.coeffs))
        sup_u = inf_u = float(state.u)
        sup_v = inf_v = float(state.udot_u)
    return DiagnosticsRecord(
        t=t, s=coh.time_rescale(t), class_coords=tuple(cls.coeffs.tolist()),
        volume_coh=volume_coh, volume_num=volume_num,
        lambda_min=lam_min, lambda_max=lam_max, trace_max=trace_max,
        sup_u=sup_u, inf_u=inf_u, sup_udot_u=sup_v, inf_udot_u=inf_v,
        metric_ratio_min=mr_min, metric_ratio_max=mr_max,
        alpha_integrals={float(a): alpha_integral(state, a, model) for a in alphas},
    )


# ---------------------------------------------------------------------------
# Fits
# ---------------------------------------------------------------------------

@dataclass
class Fit:
    slope: float
    residual_rms: float
    n_points: int


@dataclass
class FitReport:
    K_fit: Fit | None
    beta_fit: Fit | None
    voll_slope: Fit | None
    lambda_blowup: dict[int, float]
    window: dict[str, Any]
    skipped: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lambda_blowup"] = {str(k): v for k, v in self.lambda_blowup.items()}
        return out


MIN_FIT_POINTS = 3


def _lstsq(columns: Sequence[np.ndarray], y: np.ndarray) -> Fit:
    X = np.column_stack(columns)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    res = y - X @ coef
    return Fit(float(coef[0]), float(np.sqrt(np.mean(res ** 2))), int(y.size))


def fit_power_law(delta: np.ndarray, y: np.ndarray, correction: bool = True) -> Fit:
    """Exponent of ``y ~ delta^k`` from ``log y = k log delta + c (+ b delta)``.

    The linear term absorbs the analytic correction ``y = delta^k (c0 + c1 delta + ...)``
    that all cohomological volumes have near T; without it a window reaching
    delta = 0.1 biases the exponent by up to ~0.2.
    """
    delta = np.asarray(delta, dtype=float)
    cols = [np.log(delta), np.ones_like(delta)]
    if correction and delta.size > 3:
        cols.append(delta)
    return _lstsq(cols, np.log(np.asarray(y, dtype=float)))


def fit_exponents(records: Sequence[DiagnosticsRecord], T: float, t_stop: float,
                  delta_window: float = 0.1) -> FitReport:
    """Volume, metric-ratio and volume-form exponents near the singular time.

    Finite T: window ``T - delta_window <= t <= t_stop`` in the variable
    ``T - t``.  Infinite T: the last half of the run, in the variable t.
    """
    t = np.array([r.t for r in records])
    vol = np.array([r.volume_num for r in records])
    ratio_min = np.array([r.metric_ratio_min for r in records])
    inf_v = np.array([r.inf_udot_u for r in records])
    skipped: dict[str, str] = {}
    table: dict[int, float] = {}
    if math.isfinite(T):
        for j in range(1, 6):
            hit = np.flatnonzero(np.abs(t - (T - 10.0 ** -j)) <= 1e-9)
            if hit.size:
                table[j] = records[int(hit[0])].lambda_min
        mask = (t >= T - delta_window - 1e-12) & (t <= t_stop + 1e-12)
        window = {"variable": "T-t", "t_lo": T - delta_window, "t_hi": t_stop, "n_points": int(mask.sum())}
        if mask.sum() < MIN_FIT_POINTS:
            reason = f"window has {int(mask.sum())} samples, need {MIN_FIT_POINTS}"
            return FitReport(None, None, None, table, window, {"K_fit": reason, "beta_fit": reason, "voll_slope": reason})
        d = T - t[mask]
        K_fit = fit_power_law(d, vol[mask])
        beta_fit = fit_power_law(d, ratio_min[mask])
        voll = _lstsq([np.log(d), np.ones_like(d)], inf_v[mask])
    else:
        t_end = t.max()
        mask = t >= 0.5 * t_end
        window = {"variable": "t", "t_lo": 0.5 * t_end, "t_hi": float(t_end), "n_points": int(mask.sum())}
        if t_end < 5.0 or mask.sum() < MIN_FIT_POINTS:
            reason = f"run ends at t={t_end:g} with {int(mask.sum())} window samples (need t >= 5, {MIN_FIT_POINTS} samples)"
            return FitReport(None, None, None, table, window, {"K_fit": reason, "beta_fit": reason, "voll_slope": reason})
        tw = t[mask]
        ones = np.ones_like(tw)
        K_fit = _lstsq([tw, ones], np.log(vol[mask]))
        K_fit.slope = -K_fit.slope
        beta_fit = _lstsq([tw, ones], np.log(ratio_min[mask]))
        beta_fit.slope = -beta_fit.slope
        voll = _lstsq([tw, ones], inf_v[mask])
    return FitReport(K_fit, beta_fit, voll, table, window, skipped)


def blowup_detected(lambda_blowup: Mapping[int, float], floor: float = DEFAULT_BLOWUP_FLOOR) -> bool | None:
    """Ratio test ``lambda(T-1e-3) <= 2 lambda(T-1e-2)`` and ``lambda(T-1e-3) <= floor``."""
    if 2 not in lambda_blowup or 3 not in lambda_blowup:
        return None
    l2, l3 = lambda_blowup[2], lambda_blowup[3]
    return bool(l3 <= 2.0 * l2 and l3 <= floor)


# ---------------------------------------------------------------------------
# Verdicts
# ---------------------------------------------------------------------------

@dataclass
class Verdicts:
    observables: dict[str, Any]
    implications: dict[str, bool]

    @property
    def consistent(self) -> bool:
        return all(self.implications.values())

    @property
    def violated(self) -> list[str]:
        return [k for k, ok in self.implications.items() if not ok]

    def to_dict(self) -> dict:
        return {"observables": self.observables, "implications": self.implications,
                "consistent": self.consistent, "violated": self.violated}


def default_d_threshold(records: Sequence[DiagnosticsRecord]) -> float:
    return 10.0 * abs(records[0].lambda_min)


def verdicts(records: Sequence[DiagnosticsRecord], summary: coh.CohomologySummary,
             D_threshold: float | None = None, blowup_floor: float = DEFAULT_BLOWUP_FLOOR,
             fit: FitReport | None = None) -> Verdicts:
    """Evaluate the observables and check the implications proven for the flow.

    * finite T with K = 0 excludes a uniform Ricci lower bound;
    * infinite-time singularity with Ric >= -w~ forces c1^n = 0 and
      [w0] + c1 nef.

    A violated implication can only come from a defect in the computation.
    """
    D = default_d_threshold(records) if D_threshold is None else float(D_threshold)
    lam_run = min(r.lambda_min for r in records)
    finite_T = summary.finite
    noncollapsed = summary.K == 0
    ricci_bounded = lam_run >= -D
    ricci_ge_m1 = lam_run >= -1.0 - RICCI_D1_TOL
    singular_inf = (not finite_T) and not summary.limit_interior
    tol = 1e-10
    c1_top_zero = abs(summary.c1_top) <= tol
    nef = bool(summary.nef_w0_plus_c1.nef)
    obs = {
        "finite_T": finite_T,
        "noncollapsed": noncollapsed,
        "ricci_bounded": ricci_bounded,
        "D_threshold": D,
        "lambda_min_run": lam_run,
        "lambda_min_ge_minus_one": ricci_ge_m1,
        "singular_at_infinity": singular_inf,
        "c1_top_zero": c1_top_zero,
        "c1_top": summary.c1_top,
        "nef_restriction": nef,
        "nef_margin": summary.nef_w0_plus_c1.margin,
        "metric_ratio_max_run": max(r.metric_ratio_max for r in records),
        "metric_ratio_min_run": min(r.metric_ratio_min for r in records),
        "blowup_detected": blowup_detected(fit.lambda_blowup, blowup_floor) if fit is not None and finite_T else None,
    }
    implications = {
        "finite_noncollapsed_excludes_ricci_bound": not (finite_T and noncollapsed and ricci_bounded),
        "infinite_singular_ricci_bound_forces_c1n_zero_and_nef":
            not (singular_inf and ricci_ge_m1) or (c1_top_zero and nef),
    }
    return Verdicts(obs, implications)
