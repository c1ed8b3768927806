import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from krflow import cohomology as coh
from krflow.models import (CalabiModel, CalabiProfile, KaehlerViolation, ModelError, ProductModel, VanishingError,
                           calabi_background, calabi_initial_potential, grid_volume, ma_ratio, nodal_derivatives,
                           product_exact_state, product_log_volume_ratio, product_potential, product_ricci_eigs,
                           ricci_potential_initial)
import oracles

PRODUCTS = [((2, 2), (1, 2)), ((2, 2), (1, 1)), ((-2, 0), (3, 1)), ((0, 0), (1, 1)), ((-2, -2), (3, 3))]


@pytest.mark.parametrize("kappas, c0", PRODUCTS)
def test_product_coefficients_track_class(kappas, c0):
    model = ProductModel(kappas, c0)
    setup = model.setup()
    t_max = min(model.vanishing_time, 10.0)
    for t in np.linspace(0.0, t_max, 101)[:-1]:
        assert np.allclose(product_exact_state(model, t), coh.class_at(setup, t).coeffs, rtol=0, atol=1e-12)


def test_product_ke_ode():
    # dc/dt = -kappa - c, checked by central differences
    model = ProductModel((2.0, -2.0, 0.0), (1.0, 3.0, 2.0))
    h = 1e-5
    for t in (0.1, 0.2, 0.35):
        dc = (product_exact_state(model, t + h) - product_exact_state(model, t - h)) / (2 * h)
        assert np.allclose(dc, -np.asarray(model.kappas) - product_exact_state(model, t), atol=1e-8)


def test_product_ricci_eigs_closed_form():
    model = ProductModel((2, 2), (1, 2))
    for t in np.linspace(0, 0.4, 9):
        eigs, lo, hi = product_ricci_eigs(model, t)
        c = (np.array([1, 2]) + 2) * math.exp(-t) - 2
        assert np.allclose(eigs, 2 / c, rtol=1e-14)
        assert lo == eigs.min() and hi == eigs.max()


def test_product_potential_solves_ode():
    model = ProductModel((-2, 0), (3, 1))
    h = 1e-4
    for t in (0.5, 2.0, 6.0):
        du = (product_potential(model, t + h) - product_potential(model, t - h)) / (2 * h)
        assert du + product_potential(model, t) == pytest.approx(product_log_volume_ratio(model, t), abs=1e-7)


def test_product_vanishing():
    model = ProductModel((2, 2), (1, 2))
    assert model.vanishing_time == pytest.approx(math.log(1.5))
    with pytest.raises(VanishingError):
        product_exact_state(model, math.log(1.5))
    with pytest.raises(ModelError):
        ProductModel((2,), (1,))
    with pytest.raises(ModelError):
        ProductModel((2, 2), (1, 0))


def test_calabi_model_validation():
    with pytest.raises(ModelError):
        CalabiModel(4.0, 1.0)
    with pytest.raises(ModelError):
        CalabiModel(1.0, 4.0, N=2)
    m = CalabiModel(1.0, 4.0, N=11).refined(2)
    assert m.N == 21


def test_initial_potential_matches_symbolic():
    rho = sp.Symbol("rho")
    F0 = 1 * rho + 3 * sp.log(1 + sp.exp(rho))
    P = sp.log(sp.diff(F0, rho) * sp.diff(F0, rho, 2)) - 2 * rho
    m = CalabiModel(1.0, 4.0)
    pts = np.linspace(-12, 12, 25)
    ours = ricci_potential_initial(m, pts)
    F = calabi_initial_potential(m, pts)
    for k, x in enumerate(pts):
        for expr, val in ((F0, F.F[k]), (sp.diff(F0, rho), F.F1[k]), (sp.diff(F0, rho, 2), F.F2[k]),
                          (P, ours.F[k]), (sp.diff(P, rho), ours.F1[k]), (sp.diff(P, rho, 2), ours.F2[k])):
            ref = float(expr.subs(rho, sp.Float(x, 40)).evalf(40))
            assert val == pytest.approx(ref, rel=1e-12, abs=1e-14)


def test_ricci_potential_slopes():
    m = CalabiModel(2.0, 5.0)
    P = ricci_potential_initial(m, np.array([-40.0, 40.0]))
    assert P.F1 == pytest.approx([-1.0, -3.0], abs=1e-12)


def test_background_slopes_follow_class():
    m = CalabiModel(1.0, 4.0)
    for t in (0.0, 0.3, 0.6):
        bg = calabi_background(m, t, np.array([-40.0, 40.0]))
        assert tuple(bg.F1) == pytest.approx(m.slopes(t), abs=1e-12)
        # slopes are the facet values (a_t, b_t - a_t) after the E/H-E change of basis
        cls = coh.class_at(m.setup(), t)
        assert m.slopes(t) == pytest.approx((-cls.coeffs[1], cls.coeffs[0]), abs=1e-12)


def test_nodal_derivatives_neumann():
    # u = cos(pi x) has u' = 0 at both ends; both stencils converge at second order
    errs = []
    for h in (0.1, 0.05):
        x = np.linspace(-1, 1, int(round(2 / h)) + 1)
        u = np.cos(np.pi * x)
        d1, d2 = nodal_derivatives(np.diff(u), h)
        assert d1[0] == 0 and d1[-1] == 0
        errs.append((np.max(np.abs(d1 + np.pi * np.sin(np.pi * x))),
                     np.max(np.abs(d2 + np.pi ** 2 * np.cos(np.pi * x)))))
    for coarse, fine in zip(*errs):
        assert coarse / fine == pytest.approx(4.0, rel=0.05)


def test_grid_volume_initial():
    m = CalabiModel(1.0, 4.0)
    assert 2 * grid_volume(CalabiProfile.initial(m)) == pytest.approx(15.0, rel=1e-6)


def test_kaehler_check():
    m = CalabiModel(1.0, 4.0, N=101)
    u = np.zeros(m.N)
    u[50] = -1.0
    prof = CalabiProfile(m, 0.0, u, np.diff(u))
    with pytest.raises(KaehlerViolation) as err:
        prof.check_kaehler()
    assert err.value.what == "F''"
    assert err.value.index in (49, 51)


def test_ma_ratio_against_complex_hessian_t0():
    m = CalabiModel(1.0, 4.0)
    F0 = lambda r: float(calabi_initial_potential(m, np.array([r])).F[0])
    for z in oracles.sample_points(5, (-3.0, 3.0), seed=1):
        rho = math.log(float(np.sum(np.abs(z) ** 2)))
        p = calabi_initial_potential(m, np.array([rho]))
        # det of i ddbar F(log|z|^2) on C^2 is F'F'' e^{-2 rho}
        assert oracles.complex_hessian_det(F0, z) == pytest.approx(p.F1[0] * p.F2[0] * math.exp(-2 * rho), rel=1e-7)


@given(st.floats(0.1, 5.0), st.floats(0.1, 5.0), st.floats(-5, 5))
def test_ma_ratio_identity_at_start(a, gap, x):
    m = CalabiModel(a, a + gap, N=11)
    p = calabi_initial_potential(m, np.array([x]))
    assert ma_ratio(p.F1, p.F2, p.F1, p.F2)[0] == pytest.approx(1.0, rel=1e-15)
