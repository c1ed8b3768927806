"""Symmetric model geometries with closed-form or one-dimensional flows.

Two families are supported.

Products of Kähler-Einstein curves
    Each factor carries a unit-volume form ``eta_i`` with ``Ric(eta_i) = kappa_i eta_i``
    (kappa = 2 for P^1, 0 for a flat torus, -2 for a genus-2 curve).  The flow
    metric stays ``sum c_i(t) eta_i`` and each coefficient solves the same
    linear ODE as the class coordinate.

Calabi-symmetric metrics on the Hirzebruch surface F_1
    A U(2)-invariant potential ``F(rho)``, ``rho = log|z|^2``, describes a metric in
    the class bH - aE when ``F'`` increases from ``a`` (at the exceptional curve,
    rho -> -inf) to ``b`` (at the line at infinity, rho -> +inf).  The complex
    Hessian of ``F(log|z|^2)`` has determinant ``exp(-2 rho) F' F''``, so volume
    ratios reduce to ``F'F''`` ratios and the Ricci potential is
    ``R = 2 rho - log(F'F'')``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
from scipy import integrate
from scipy.special import expit

from . import cohomology as coh

KAPPA_P1 = 2.0
KAPPA_TORUS = 0.0
KAPPA_GENUS2 = -2.0


class ModelError(ValueError):
    pass


class VanishingError(ModelError):
    """A product coefficient reached zero: the flow does not exist at the requested time."""

    def __init__(self, t: float, vanishing_time: float):
        super().__init__(f"t={t:g} is at or beyond the first vanishing time {vanishing_time:.16g}")
        self.t = t
        self.vanishing_time = vanishing_time


class KaehlerViolation(RuntimeError):
    """A profile failed F' > 0, F'' > floor somewhere on the grid."""

    def __init__(self, t: float, index: int, rho: float, value: float, what: str = "F''"):
        super().__init__(f"Kähler condition violated at t={t:.10g}: {what}={value:.3e} at rho={rho:.6g} (node {index})")
        self.t = t
        self.index = index
        self.rho = rho
        self.value = value
        self.what = what


# ---------------------------------------------------------------------------
# Products of KE curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProductModel:
    kappas: tuple[float, ...]
    c0: tuple[float, ...]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        kappas = tuple(float(k) for k in self.kappas)
        c0 = tuple(float(c) for c in self.c0)
        if len(kappas) < 2 or len(kappas) != len(c0):
            raise ModelError("product model needs >= 2 factors with one kappa and one c0 each")
        if any(c <= 0 for c in c0):
            raise ModelError(f"initial coefficients must be positive, got {c0}")
        object.__setattr__(self, "kappas", kappas)
        object.__setattr__(self, "c0", c0)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"eta{i + 1}" for i in range(len(kappas))))

    @property
    def n(self) -> int:
        return len(self.kappas)

    def setup(self, tol: float = coh.DEFAULT_TOL) -> coh.CohomologySetup:
        return coh.product_setup(self.kappas, self.c0, self.labels, tol)

    @property
    def vanishing_time(self) -> float:
        """First time some coefficient ``(c0 + kappa) e^{-t} - kappa`` reaches 0."""
        times = [math.log((c + k) / k) if k > 0 else math.inf for k, c in zip(self.kappas, self.c0)]
        return min(times)


class ProductState(NamedTuple):
    t: float
    coeffs: np.ndarray
    u: float
    udot_u: float


def product_exact_state(model: ProductModel, t: float) -> np.ndarray:
    """Coefficients ``c_i(t) = (c0_i + kappa_i) e^{-t} - kappa_i``."""
    t = float(t)
    if t < 0 or math.isnan(t):
        raise ModelError(f"time must be >= 0, got {t}")
    if t >= model.vanishing_time:
        raise VanishingError(t, model.vanishing_time)
    k = np.asarray(model.kappas)
    return (np.asarray(model.c0) + k) * math.exp(-t) - k


def product_ricci_eigs(model: ProductModel, t: float) -> tuple[np.ndarray, float, float]:
    """Eigenvalues ``kappa_i / c_i(t)`` of the Ricci endomorphism, with min and max."""
    eigs = np.asarray(model.kappas) / product_exact_state(model, t)
    return eigs, float(eigs.min()), float(eigs.max())


def product_log_volume_ratio(model: ProductModel, t: float) -> float:
    """``log(w~_t^n / w_0^n)``, constant in space on a product."""
    return float(np.sum(np.log(product_exact_state(model, t) / np.asarray(model.c0))))


def product_potential(model: ProductModel, t: float) -> float:
    """Spatially constant potential ``u(t)`` solving ``u' + u = log(w~_t^n / w_0^n)``, ``u(0) = 0``."""
    if t == 0:
        return 0.0
    val, _ = integrate.quad(lambda s: math.exp(s - t) * product_log_volume_ratio(model, s), 0.0, t,
                            epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def product_state(model: ProductModel, t: float) -> ProductState:
    coeffs = product_exact_state(model, t)
    return ProductState(float(t), coeffs, product_potential(model, t), product_log_volume_ratio(model, t))


# ---------------------------------------------------------------------------
# Calabi ansatz on F_1
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalabiModel:
    a: float
    b: float
    L: float = 15.0
    N: int = 2048

    def __post_init__(self):
        if not (0 < self.a < self.b):
            raise ModelError(f"need 0 < a < b, got a={self.a}, b={self.b}")
        if self.N < 3 or int(self.N) != self.N:
            raise ModelError(f"need an integer N >= 3, got {self.N}")
        if not self.L > 0:
            raise ModelError(f"need L > 0, got {self.L}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def rho(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.N)

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.N - 1)

    def setup(self, tol: float = coh.DEFAULT_TOL) -> coh.CohomologySetup:
        return coh.hirzebruch_f1_setup(self.a, self.b, tol)

    def slopes(self, t: float) -> tuple[float, float]:
        """Asymptotic slopes ``(a_t, b_t)`` of the flow potential, read off ``class_at``."""
        e = math.exp(-t)
        return -1.0 + e * (self.a + 1.0), -3.0 + e * (self.b + 3.0)

    def refined(self, factor: int = 2) -> "CalabiModel":
        """Same model with ``factor`` times as many grid intervals (old nodes are kept)."""
        return CalabiModel(self.a, self.b, self.L, (self.N - 1) * factor + 1)


class Potential(NamedTuple):
    F: np.ndarray
    F1: np.ndarray
    F2: np.ndarray


def calabi_initial_potential(model: CalabiModel, rho: np.ndarray | None = None) -> Potential:
    """``F0 = a rho + (b - a) log(1 + e^rho)`` with its first two derivatives."""
    rho = model.rho if rho is None else np.asarray(rho, dtype=float)
    a, b = model.a, model.b
    sig = expit(rho)
    F = a * rho + (b - a) * np.logaddexp(0.0, rho)
    F1 = a + (b - a) * sig
    F2 = (b - a) * sig * expit(-rho)
    return Potential(F, F1, F2)


def ricci_potential_initial(model: CalabiModel, rho: np.ndarray | None = None) -> Potential:
    """Potential ``P = log(F0'F0'') - 2 rho`` of -Ric(w0), and ``P'``, ``P''``.

    Written with logistic functions so it stays accurate for |rho| ~ 40.
    Slopes tend to -1 at -inf and -3 at +inf, i.e. P represents -c1 = -3H + E.
    """
    rho = model.rho if rho is None else np.asarray(rho, dtype=float)
    a, b = model.a, model.b
    sig, sigm = expit(rho), expit(-rho)
    F1 = a + (b - a) * sig
    # log F0'' = log(b-a) + log sig + log(1-sig)
    log_F2 = math.log(b - a) - np.logaddexp(0.0, -rho) - np.logaddexp(0.0, rho)
    P = np.log(F1) + log_F2 - 2.0 * rho
    F2 = (b - a) * sig * sigm
    q = F2 / F1                           # (log F0')'
    r = sigm - sig                        # (log F0'')'
    P1 = q + r - 2.0
    P2 = q * (sigm - sig) - q * q - 2.0 * sig * sigm
    return Potential(P, P1, P2)


def calabi_background(model: CalabiModel, t: float, rho: np.ndarray | None = None) -> Potential:
    """Background potential ``chi_t = (1 - e^{-t}) P + e^{-t} F0`` and derivatives."""
    if t < 0:
        raise ModelError(f"time must be >= 0, got {t}")
    e = math.exp(-t)
    F0 = calabi_initial_potential(model, rho)
    P = ricci_potential_initial(model, rho)
    w = -math.expm1(-t)
    return Potential(w * P.F + e * F0.F, w * P.F1 + e * F0.F1, w * P.F2 + e * F0.F2)


def nodal_derivatives(du: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """First and second centered differences of u from its increments.

    ``du[j] = u[j+1] - u[j]``.  Mirror ghost nodes enforce u' = 0 at both ends.
    Working from increments keeps the tiny curvature at the grid ends accurate:
    ``du`` there is O(e^{-L}) and is stored with full relative precision.
    """
    ext = np.concatenate(([-du[0]], du, [-du[-1]]))
    d1 = (ext[:-1] + ext[1:]) / (2.0 * h)
    d2 = (ext[1:] - ext[:-1]) / (h * h)
    return d1, d2


@dataclass(frozen=True, eq=False)
class CalabiProfile:
    """Snapshot of the Calabi-reduced flow potential on the rho grid.

    ``u`` is the correction ``F - chi_t``; ``du`` holds its grid increments,
    which are the primary unknowns of the solver (``u`` is their cumulative sum
    anchored at ``u[0]``).  ``udot`` is the backward-difference time derivative
    from the step that produced this profile, if any.
    """

    model: CalabiModel
    t: float
    u: np.ndarray
    du: np.ndarray
    udot: np.ndarray | None = None

    @classmethod
    def initial(cls, model: CalabiModel) -> "CalabiProfile":
        return cls(model, 0.0, np.zeros(model.N), np.zeros(model.N - 1), np.zeros(model.N))

    @classmethod
    def from_increments(cls, model: CalabiModel, t: float, u0: float, du: np.ndarray,
                        udot: np.ndarray | None = None) -> "CalabiProfile":
        u = u0 + np.concatenate(([0.0], np.cumsum(du)))
        return cls(model, float(t), u, np.asarray(du, dtype=float), udot)

    @property
    def rho(self) -> np.ndarray:
        return self.model.rho

    @cached_property
    def background(self) -> Potential:
        return calabi_background(self.model, self.t)

    @cached_property
    def initial_potential(self) -> Potential:
        return calabi_initial_potential(self.model)

    @cached_property
    def _u_derivs(self) -> tuple[np.ndarray, np.ndarray]:
        return nodal_derivatives(self.du, self.model.h)

    @property
    def F1(self) -> np.ndarray:
        return self.background.F1 + self._u_derivs[0]

    @property
    def F2(self) -> np.ndarray:
        return self.background.F2 + self._u_derivs[1]

    @property
    def F(self) -> np.ndarray:
        return self.background.F + self.u

    def check_kaehler(self, floor: float = 0.0) -> None:
        for what, arr, lim in (("F'", self.F1, 0.0), ("F''", self.F2, floor)):
            bad = ~(arr > lim)
            if np.any(bad):
                i = int(np.argmax(bad))
                raise KaehlerViolation(self.t, i, float(self.rho[i]), float(arr[i]), what)


def ma_ratio(F1, F2, F01, F02) -> np.ndarray:
    """Volume-form ratio ``w~^n / w_0^n = F'F'' / (F0'F0'')`` under the ansatz."""
    return (np.asarray(F1) * np.asarray(F2)) / (np.asarray(F01) * np.asarray(F02))


def log_ma_ratio(profile: CalabiProfile) -> np.ndarray:
    """``log(F'F''/(F0'F0''))``, which equals du/dt + u along the flow."""
    profile.check_kaehler()
    F0 = profile.initial_potential
    return np.log(profile.F1 / F0.F1) + np.log(profile.F2 / F0.F2)


def calabi_ma_ratio(profile: CalabiProfile) -> np.ndarray:
    profile.check_kaehler()
    F0 = profile.initial_potential
    return ma_ratio(profile.F1, profile.F2, F0.F1, F0.F2)


def grid_volume(profile: CalabiProfile) -> float:
    """Trapezoid integral of ``F'F''`` over the grid; equals ``(b_t^2 - a_t^2) / 2`` up to truncation."""
    return float(integrate.trapezoid(profile.F1 * profile.F2, profile.rho))
