import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from krflow import cohomology as coh
from oracles import brute_intersection, brute_K

LOG = math.log

# (setup, hand-derived T, K)
CASES = {
    "p1p1-collapse": (lambda: coh.product_setup([2, 2], [1, 2]), LOG(3 / 2), 1),
    "p1p1-shrink": (lambda: coh.product_setup([2, 2], [1, 1]), LOG(3 / 2), 2),
    "f1-contract": (lambda: coh.hirzebruch_f1_setup(1, 4), LOG(2), 0),
    "f1-fiber": (lambda: coh.hirzebruch_f1_setup(2, 5), LOG(5 / 2), 1),
    "sigma2xT2": (lambda: coh.product_setup([-2, 0], [3, 1]), math.inf, 1),
}


@pytest.mark.parametrize("name", CASES)
def test_singularity_time_and_collapse(name):
    make, T, K = CASES[name]
    setup = make()
    sing = coh.singularity_time(setup)
    if math.isinf(T):
        assert math.isinf(sing.T)
    else:
        assert abs(sing.T - T) <= 1e-12
    assert coh.collapse_exponent(setup).K == K
    assert brute_K(setup.tensor.entries, sing.limit_class.coeffs, setup.omega0.coeffs) == K


def test_p1p1_shrink_hits_both_facets():
    sing = coh.singularity_time(coh.product_setup([2, 2], [1, 1]))
    assert sing.active_facets == (0, 1)
    assert sing.limit_class.allclose(coh.CohClass([0.0, 0.0]))


def test_f1_facets():
    sing = coh.singularity_time(coh.hirzebruch_f1_setup(1, 4))
    assert sing.active_facets == (0,)
    assert sing.facet_times[1] == pytest.approx(LOG(5 / 2), abs=1e-14)
    # T on the E facet depends only on a
    for b in (3.5, 4.0, 4.5):
        assert coh.singularity_time(coh.hirzebruch_f1_setup(1, b)).T == pytest.approx(LOG(2), abs=1e-14)


def test_f1_sweep_regime_transition():
    # K switches from 0 to 1 once the H-E facet is hit first, i.e. for b < 3a
    Ks = [coh.collapse_exponent(coh.hirzebruch_f1_setup(a, 5.0)).K for a in (1.5, 2.0, 2.5)]
    assert Ks == [0, 1, 1]


def test_f1_intersections():
    s = coh.hirzebruch_f1_setup(1, 4)
    assert coh.top_intersection(s.tensor, [s.c1, s.c1]) == 8.0
    assert coh.volume_poly(s, 0.0) == pytest.approx(15.0)
    assert coh.volume_poly(s, LOG(2)) == pytest.approx(0.25, abs=1e-14)


def test_class_at_endpoints():
    s = coh.hirzebruch_f1_setup(1, 4)
    assert coh.class_at(s, 0.0).allclose(s.omega0)
    assert coh.class_at(s, math.inf) == -s.c1
    with pytest.raises(coh.CohomologyError):
        coh.class_at(s, -1.0)


def test_sigma2xT2_restrictions():
    s = coh.product_setup([-2, 0], [3, 1])
    summary = coh.summarize(s)
    assert summary.c1_top == 0.0
    assert summary.nef_w0_plus_c1.nef
    assert (s.omega0 + s.c1).allclose(coh.CohClass([1.0, 1.0]))
    assert summary.regime == "infinite-singular"


@pytest.mark.parametrize("kappas, c0, regime", [
    ([2, 2], [1, 2], "finite-collapsed"),
    ([-2, 0], [3, 1], "infinite-singular"),
    ([0, 0], [1, 1], "convergent"),
    ([-2, -2], [3, 3], "convergent"),
])
def test_regimes_products(kappas, c0, regime):
    assert coh.summarize(coh.product_setup(kappas, c0)).regime == regime


def test_sigma2xsigma2_limit_interior():
    summary = coh.summarize(coh.product_setup([-2, -2], [3, 3]))
    assert summary.limit_interior
    assert summary.limit_class == coh.CohClass([2.0, 2.0])


def test_invalid_setups():
    with pytest.raises(coh.CohomologyError):
        coh.product_setup([2, 2], [1, -1])
    with pytest.raises(coh.CohomologyError):
        coh.hirzebruch_f1_setup(4, 1)
    with pytest.raises(coh.CohomologyError):
        coh.IntersectionTensor(2, np.array([[0.0, 1.0], [0.0, 0.0]]))
    s = coh.product_setup([2, 2], [1, 2])
    with pytest.raises(coh.CohomologyError):
        coh.top_intersection(s.tensor, [s.c1])


def test_volume_exponent_near_T():
    # local log-log slope of the exact volume polynomial at delta = 1e-7
    for name, (make, T, K) in CASES.items():
        if math.isinf(T):
            continue
        s = make()
        d1, d2 = 1e-6, 1e-7
        v1, v2 = coh.volume_poly(s, T - d1), coh.volume_poly(s, T - d2)
        if K == 0:
            assert v2 > 0.1
        else:
            assert (math.log(v1) - math.log(v2)) / (math.log(d1) - math.log(d2)) == pytest.approx(K, abs=1e-4)


def test_infinite_time_e_folding():
    s = coh.product_setup([-2, 0], [3, 1])
    slope = (math.log(coh.volume_poly(s, 20.0)) - math.log(coh.volume_poly(s, 30.0))) / 10.0
    assert slope == pytest.approx(1.0, abs=1e-6)


# -- properties ---------------------------------------------------------------

times = st.floats(min_value=0.0, max_value=30.0, allow_nan=False)


@given(times)
def test_time_rescale_round_trip(t):
    assert coh.time_unrescale(coh.time_rescale(t)) == pytest.approx(t, rel=1e-12, abs=1e-15)


@given(st.floats(min_value=0.0, max_value=5.0), st.floats(0.1, 5.0), st.floats(0.1, 5.0))
def test_rescaled_class_is_affine_in_s(t, a, b):
    # e^t [w~_t] = w0 - 2 s c1 with s = (e^t - 1)/2
    s = coh.product_setup([2, -2], [a, b])
    lhs = coh.rescale_class(coh.class_at(s, t), t)
    rhs = s.omega0 - 2.0 * coh.time_rescale(t) * s.c1
    assert np.allclose(lhs.coeffs, rhs.coeffs, rtol=1e-12, atol=1e-12)


@settings(max_examples=50)
@given(st.integers(2, 4), st.data())
def test_top_intersection_matches_brute_force(n, data):
    dim = data.draw(st.integers(1, 3))
    rng = np.random.default_rng(data.draw(st.integers(0, 2 ** 31)))
    raw = rng.normal(size=(dim,) * n)
    # symmetrize
    sym = np.zeros_like(raw)
    perms = list(itertools.permutations(range(n)))
    for p in perms:
        sym += np.transpose(raw, p)
    sym /= len(perms)
    tensor = coh.IntersectionTensor(n, sym)
    classes = [coh.CohClass(rng.normal(size=dim)) for _ in range(n)]
    assert coh.top_intersection(tensor, classes) == pytest.approx(
        brute_intersection(sym, [c.coeffs for c in classes]), rel=1e-10, abs=1e-10)


kappa = st.sampled_from([2.0, 0.0, -2.0])


@given(st.lists(st.tuples(kappa, st.floats(0.1, 10.0)), min_size=2, max_size=4))
def test_product_T_and_K_closed_form(factors):
    kappas = [k for k, _ in factors]
    c0 = [c for _, c in factors]
    s = coh.product_setup(kappas, c0)
    hit = [math.log((c + k) / k) for k, c in factors if k > 0]
    T = min(hit) if hit else math.inf
    sing = coh.singularity_time(s)
    if math.isinf(T):
        assert math.isinf(sing.T)
        K = sum(1 for k in kappas if k == 0)
    else:
        assert sing.T == pytest.approx(T, rel=1e-13)
        K = sum(1 for k, c in factors if k > 0 and abs(math.log((c + k) / k) - T) <= 1e-12 * max(1.0, T))
    assert coh.collapse_exponent(s, sing).K == K


@given(st.floats(0.05, 10.0), st.floats(0.05, 10.0))
def test_f1_T_closed_form(a, gap):
    b = a + gap
    s = coh.hirzebruch_f1_setup(a, b)
    assert coh.singularity_time(s).T == pytest.approx(min(math.log(a + 1), math.log((b - a + 2) / 2)), rel=1e-13)


@given(st.floats(0.05, 10.0), st.floats(0.05, 10.0), st.floats(0.0, 1.0))
def test_volume_positive_before_T(a, gap, frac):
    s = coh.hirzebruch_f1_setup(a, a + gap)
    T = coh.singularity_time(s).T
    assert coh.volume_poly(s, frac * T * (1 - 1e-9)) > 0
