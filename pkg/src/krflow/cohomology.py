"""Finite-dimensional cohomology engine for the normalized Kähler-Ricci flow.

Along the normalized flow the class of the evolving metric moves on the
segment

    [w_t] = -c1 + exp(-t) ([w_0] + c1),

so the maximal existence time, the limit class and the rate at which the total
volume degenerates are all computable from a handful of numbers: a basis of
H^{1,1}, the intersection form, a polyhedral description of the Kähler cone,
c1 and [w_0].  Everything here is a pure function of an immutable
:class:`CohomologySetup`.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

DEFAULT_TOL = 1e-10


class CohomologyError(ValueError):
    """Invalid class data or operation arguments."""


class DegenerateSetupError(CohomologyError):
    """The initial class is not Kähler, or the setup is internally inconsistent."""


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CohClass:
    """Coordinates of a real (1,1)-class in a fixed basis."""

    coeffs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.coeffs, dtype=float)
        if arr.ndim != 1:
            raise CohomologyError(f"class coefficients must be a vector, got shape {arr.shape}")
        object.__setattr__(self, "coeffs", _frozen(arr))

    def __len__(self) -> int:
        return self.coeffs.shape[0]

    def __iter__(self):
        return iter(self.coeffs.tolist())

    def _other(self, other: "CohClass") -> np.ndarray:
        if not isinstance(other, CohClass):
            return NotImplemented
        if len(other) != len(self):
            raise CohomologyError(f"dimension mismatch: {len(self)} vs {len(other)}")
        return other.coeffs

    def __add__(self, other):
        o = self._other(other)
        if o is NotImplemented:
            return o
        return CohClass(self.coeffs + o)

    def __sub__(self, other):
        o = self._other(other)
        if o is NotImplemented:
            return o
        return CohClass(self.coeffs - o)

    def __neg__(self):
        return CohClass(-self.coeffs)

    def __mul__(self, scalar):
        if isinstance(scalar, CohClass):
            return NotImplemented
        return CohClass(float(scalar) * self.coeffs)

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, CohClass):
            return NotImplemented
        return len(self) == len(other) and bool(np.array_equal(self.coeffs, other.coeffs))

    def __hash__(self):
        return hash(tuple(self.coeffs.tolist()))

    def allclose(self, other: "CohClass", atol: float = 1e-12) -> bool:
        return len(self) == len(other) and bool(np.allclose(self.coeffs, other.coeffs, rtol=0.0, atol=atol))

    def __repr__(self) -> str:
        return f"CohClass({self.coeffs.tolist()})"


@dataclass(frozen=True, eq=False)
class IntersectionTensor:
    """Fully symmetric n-linear intersection form on H^{1,1}."""

    n: int
    entries: np.ndarray

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise CohomologyError(f"complex dimension must be an integer >= 2, got {self.n}")
        arr = np.asarray(self.entries, dtype=float)
        if arr.ndim != self.n or len(set(arr.shape)) != 1:
            raise CohomologyError(f"intersection tensor must be a cube of order {self.n}, got shape {arr.shape}")
        for perm in itertools.permutations(range(self.n)):
            if not np.allclose(arr, np.transpose(arr, perm), rtol=0.0, atol=1e-14):
                raise CohomologyError("intersection tensor is not symmetric")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "entries", _frozen(arr))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def from_monomials(cls, dim: int, n: int, monomials: Mapping[Sequence[int], float]) -> "IntersectionTensor":
        """Build the symmetric tensor from values on sorted index tuples.

        ``{(0, 1): 1.0}`` with ``n=2`` sets both ``T[0,1]`` and ``T[1,0]`` to 1.
        """
        arr = np.zeros((dim,) * n)
        for idx, value in monomials.items():
            if len(idx) != n:
                raise CohomologyError(f"monomial {idx} does not have {n} indices")
            for perm in set(itertools.permutations(idx)):
                arr[perm] = value
        return cls(n, arr)


@dataclass(frozen=True, eq=False)
class ConeSpec:
    """Polyhedral Kähler cone given by linear functionals positive on its interior."""

    facets: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        arr = np.atleast_2d(np.asarray(self.facets, dtype=float))
        if arr.size == 0 or arr.shape[0] == 0:
            raise CohomologyError("cone needs at least one facet")
        labels = tuple(self.labels) or tuple(f"facet{i}" for i in range(arr.shape[0]))
        if len(labels) != arr.shape[0]:
            raise CohomologyError("one label per facet required")
        object.__setattr__(self, "facets", _frozen(arr))
        object.__setattr__(self, "labels", labels)

    def values(self, cls: CohClass) -> np.ndarray:
        if len(cls) != self.facets.shape[1]:
            raise CohomologyError(f"class has {len(cls)} coordinates, cone expects {self.facets.shape[1]}")
        return self.facets @ cls.coeffs


@dataclass(frozen=True, eq=False)
class CohomologySetup:
    n: int
    labels: tuple[str, ...]
    tensor: IntersectionTensor
    cone: ConeSpec
    c1: CohClass
    omega0: CohClass
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        dim = len(self.labels)
        if self.tensor.n != self.n:
            raise CohomologyError(f"tensor order {self.tensor.n} != n={self.n}")
        for name, size in (("tensor", self.tensor.dim), ("cone", self.cone.facets.shape[1]),
                           ("c1", len(self.c1)), ("omega0", len(self.omega0))):
            if size != dim:
                raise CohomologyError(f"{name} has dimension {size}, basis has {dim}")
        margins = self.cone.values(self.omega0)
        if np.any(margins <= self.tol):
            bad = [self.cone.labels[i] for i in np.flatnonzero(margins <= self.tol)]
            raise DegenerateSetupError(f"omega0 {self.omega0} is not strictly inside the cone (facets {bad})")
        vol = top_intersection(self.tensor, [self.omega0] * self.n)
        if vol <= self.tol:
            raise DegenerateSetupError(f"[omega0]^n = {vol} is not positive")

    @property
    def dim(self) -> int:
        return len(self.labels)


class SingularityInfo(NamedTuple):
    T: float
    active_facets: tuple[int, ...]
    limit_class: CohClass
    facet_times: tuple[float, ...]


class CollapseInfo(NamedTuple):
    K: int
    mixed: tuple[float, ...]


class NefResult(NamedTuple):
    nef: bool
    margin: float


def class_at(setup: CohomologySetup, t: float) -> CohClass:
    """Class of the normalized flow metric at time ``t`` (``math.inf`` allowed)."""
    t = float(t)
    if math.isnan(t) or t < 0:
        raise CohomologyError(f"time must be >= 0, got {t}")
    if math.isinf(t):
        return -setup.c1
    return -setup.c1 + math.exp(-t) * (setup.omega0 + setup.c1)


def singularity_time(setup: CohomologySetup) -> SingularityInfo:
    """First time the class segment leaves the open Kähler cone.

    Facet value along the flow is ``-l(c1) + e^{-t} l(w0 + c1)``; it reaches zero
    at ``t = log(l(w0 + c1) / l(c1))`` when ``l(c1) > 0`` (the ratio is then
    automatically in (0, 1) since ``l(w0) > 0``).  Otherwise the facet is never hit.
    """
    tol = setup.tol
    lc1 = setup.cone.values(setup.c1)
    lw = setup.cone.values(setup.omega0 + setup.c1)
    if np.any(setup.cone.values(setup.omega0) <= tol):
        raise DegenerateSetupError("omega0 violates a facet at t=0")
    times = []
    for num, den in zip(lc1, lw):
        ratio = num / den if den > 0 else -math.inf
        times.append(math.log(den / num) if den > 0 and ratio > tol else math.inf)
    T = min(times)
    if math.isinf(T):
        limit = -setup.c1
        active = tuple(int(i) for i in np.flatnonzero(np.abs(setup.cone.values(limit)) <= tol))
    else:
        limit = class_at(setup, T)
        active = tuple(i for i, ti in enumerate(times) if abs(ti - T) <= 1e-12 * max(1.0, T))
    return SingularityInfo(T, active, limit, tuple(times))


def top_intersection(tensor: IntersectionTensor, classes: Sequence[CohClass]) -> float:
    """Multilinear evaluation ``T(x_1, ..., x_n)``."""
    classes = list(classes)
    if len(classes) != tensor.n:
        raise CohomologyError(f"need exactly {tensor.n} classes, got {len(classes)}")
    acc = tensor.entries
    for cls in classes:
        if len(cls) != tensor.dim:
            raise CohomologyError(f"class of dimension {len(cls)} for tensor of dimension {tensor.dim}")
        acc = np.tensordot(acc, cls.coeffs, axes=([0], [0]))
    return float(acc)


def mixed_intersections(setup: CohomologySetup, limit: CohClass) -> tuple[float, ...]:
    """``[limit]^{n-k} . [w0]^k`` for k = 0..n."""
    n = setup.n
    return tuple(top_intersection(setup.tensor, [limit] * (n - k) + [setup.omega0] * k) for k in range(n + 1))


def collapse_exponent(setup: CohomologySetup, sing: SingularityInfo | None = None) -> CollapseInfo:
    """Smallest k with ``[w_T]^{n-k} . [w0]^k > 0`` (limit class -c1 when T is infinite)."""
    if sing is None:
        sing = singularity_time(setup)
    mixed = mixed_intersections(setup, sing.limit_class)
    for k, value in enumerate(mixed):
        if value > setup.tol:
            return CollapseInfo(k, mixed)
    raise DegenerateSetupError(f"no positive mixed intersection among {mixed}; [omega0]^n must be > 0")


def volume_poly(setup: CohomologySetup, t: float) -> float:
    """Total volume ``[w_t]^n`` of the flow class."""
    cls = class_at(setup, t)
    return top_intersection(setup.tensor, [cls] * setup.n)


def nef_check(setup: CohomologySetup, cls: CohClass, tol: float | None = None) -> NefResult:
    """Whether ``cls`` lies in the closed cone, with the smallest facet value as margin."""
    tol = setup.tol if tol is None else tol
    margin = float(np.min(setup.cone.values(cls)))
    return NefResult(margin >= -tol, margin)


def is_kaehler(setup: CohomologySetup, cls: CohClass) -> bool:
    return bool(np.all(setup.cone.values(cls) > setup.tol))


def time_rescale(t: float) -> float:
    """Unnormalized flow time ``s = (e^t - 1) / 2``."""
    t = float(t)
    if math.isnan(t) or t < 0:
        raise CohomologyError(f"time must be >= 0, got {t}")
    return math.expm1(t) / 2.0


def time_unrescale(s: float) -> float:
    """Inverse of :func:`time_rescale`."""
    s = float(s)
    if math.isnan(s) or s < 0:
        raise CohomologyError(f"time must be >= 0, got {s}")
    return math.log1p(2.0 * s)


def rescale_class(cls: CohClass, t: float) -> CohClass:
    """Class of the unnormalized metric ``w(s) = e^t w~_t``."""
    if t < 0:
        raise CohomologyError(f"time must be >= 0, got {t}")
    return math.exp(t) * cls


def product_setup(kappas: Iterable[float], c0: Iterable[float], labels: Sequence[str] | None = None,
                  tol: float = DEFAULT_TOL) -> CohomologySetup:
    """Setup for a product of m curves with unit-volume factor forms.

    The only nonzero intersection is ``eta_1 . ... . eta_m = 1``.
    """
    kappas = list(map(float, kappas))
    c0 = list(map(float, c0))
    m = len(kappas)
    if m < 2 or len(c0) != m:
        raise CohomologyError("product needs >= 2 factors with matching kappa/c0 lists")
    labels = tuple(labels) if labels else tuple(f"eta{i + 1}" for i in range(m))
    tensor = IntersectionTensor.from_monomials(m, m, {tuple(range(m)): 1.0})
    cone = ConeSpec(np.eye(m), tuple(f"{lab}>0" for lab in labels))
    return CohomologySetup(m, labels, tensor, cone, CohClass(kappas), CohClass(c0), tol)


def hirzebruch_f1_setup(a: float, b: float, tol: float = DEFAULT_TOL) -> CohomologySetup:
    """Setup for the first Hirzebruch surface with [w0] = bH - aE.

    Coordinates are (H, E) coefficients, so bH - aE is ``(b, -a)``.  Facets pair
    with the curves E and H - E, giving ``(a, b - a)`` on bH - aE.
    """
    tensor = IntersectionTensor.from_monomials(2, 2, {(0, 0): 1.0, (1, 1): -1.0})
    cone = ConeSpec([[0.0, -1.0], [1.0, 1.0]], ("E", "H-E"))
    return CohomologySetup(2, ("H", "E"), tensor, cone, CohClass([3.0, -1.0]), CohClass([b, -a]), tol)


REGIMES = ("finite-noncollapsed", "finite-collapsed", "infinite-singular", "convergent")


@dataclass(frozen=True)
class CohomologySummary:
    T: float
    facet_times: tuple[float, ...]
    active_facets: tuple[str, ...]
    limit_class: CohClass
    K: int
    mixed: tuple[float, ...]
    c1_top: float
    nef_w0_plus_c1: NefResult
    limit_interior: bool
    regime: str

    @property
    def finite(self) -> bool:
        return math.isfinite(self.T)


def classify_regime(setup: CohomologySetup, sing: SingularityInfo, K: int) -> str:
    if math.isfinite(sing.T):
        return "finite-noncollapsed" if K == 0 else "finite-collapsed"
    if np.all(np.abs(setup.c1.coeffs) <= setup.tol) or is_kaehler(setup, sing.limit_class):
        return "convergent"
    return "infinite-singular"


def summarize(setup: CohomologySetup) -> CohomologySummary:
    sing = singularity_time(setup)
    col = collapse_exponent(setup, sing)
    return CohomologySummary(
        T=sing.T,
        facet_times=sing.facet_times,
        active_facets=tuple(setup.cone.labels[i] for i in sing.active_facets),
        limit_class=sing.limit_class,
        K=col.K,
        mixed=col.mixed,
        c1_top=top_intersection(setup.tensor, [setup.c1] * setup.n),
        nef_w0_plus_c1=nef_check(setup, setup.omega0 + setup.c1),
        limit_interior=is_kaehler(setup, sing.limit_class),
        regime=classify_regime(setup, sing, col.K),
    )
