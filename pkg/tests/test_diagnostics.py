import math

import numpy as np
import pytest
import sympy as sp

from krflow import cohomology as coh
from krflow import diagnostics as diag
from krflow import solver
from krflow.models import CalabiModel, CalabiProfile, ProductModel, product_state
import oracles

F1_MODEL = CalabiModel(1.0, 4.0)


def _compare(profile, F_expr, stride=41):
    eigs = diag.ricci_eigs_calabi(profile)
    rho = profile.rho[1:-1]
    idx = np.unique(np.r_[np.arange(0, rho.size, stride), [0, 1, rho.size - 2, rho.size - 1]])
    tang, rad = oracles.ricci_eigs_reference(F_expr, rho[idx])
    err = np.maximum(np.abs(eigs.tangential[idx] - tang), np.abs(eigs.radial[idx] - rad))
    return rho[idx], err


def test_ricci_eigs_initial_metric():
    prof = CalabiProfile.initial(F1_MODEL)
    _, err = _compare(prof, oracles.symbolic_background(1, 4, 0.0))
    assert err.max() < 1e-6


def test_ricci_eigs_flowed_background():
    # u = 0 on the background chi_t: closed-form F away from t = 0
    t = 0.4
    prof = CalabiProfile(F1_MODEL, t, np.zeros(F1_MODEL.N), np.zeros(F1_MODEL.N - 1))
    rho, err = _compare(prof, oracles.symbolic_background(1, 4, t))
    assert err[np.abs(rho) <= 10].max() < 1e-6
    # the far tail loses digits to F'' ~ e^{-|rho|} in the radial eigenvalue
    assert err.max() < 1e-4


def test_ricci_eigs_converge_with_grid():
    # perturbed profile: u = eps / cosh(rho / 2)^2 (flat at the ends); error falls ~h^2
    eps, t = 0.05, 0.2
    r = sp.Symbol("rho", real=True)
    expr = oracles.symbolic_background(1, 4, t) + sp.Rational(1, 20) / sp.cosh(r / 2) ** 2
    errs = []
    for N in (1025, 2049):
        m = CalabiModel(1.0, 4.0, N=N)
        u = eps / np.cosh(m.rho / 2) ** 2
        prof = CalabiProfile(m, t, u, np.diff(u))
        eigs = diag.ricci_eigs_calabi(prof)
        pts = np.linspace(-6, 6, 7)
        idx = np.searchsorted(m.rho[1:-1], pts)
        tang, rad = oracles.ricci_eigs_reference(expr, m.rho[1:-1][idx], dps=40)
        errs.append(max(np.abs(eigs.tangential[idx] - tang).max(), np.abs(eigs.radial[idx] - rad).max()))
    assert errs[1] < 1e-4
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)


def test_product_record_lambda_exact():
    model = ProductModel((2, 2), (1, 2))
    setup = model.setup()
    for t in np.linspace(0, 0.4, 21):
        rec = diag.make_record(product_state(model, t), model, setup)
        c = (np.array([1.0, 2.0]) + 2) * math.exp(-t) - 2
        assert rec.lambda_min == pytest.approx(float(np.min(2 / c)), abs=1e-12)
        assert rec.volume_num == pytest.approx(rec.volume_coh, rel=1e-12)


def test_metric_comparison():
    assert diag.metric_comparison(CalabiProfile.initial(F1_MODEL)) == (1.0, 1.0)
    model = ProductModel((-2, 0), (3, 1))
    for t in (0.5, 2.0, 8.0):
        lo, hi = diag.metric_comparison(product_state(model, t), model)
        assert hi <= 1.0
        assert lo == pytest.approx(math.exp(-t), rel=1e-12)


def test_alpha_integral():
    model = ProductModel((2, 2), (1, 2))
    assert diag.alpha_integral(product_state(model, 0.3), 0.5, model) == 4.0
    assert diag.alpha_integral(CalabiProfile.initial(F1_MODEL), 1.0) == pytest.approx(15.0, rel=1e-6)
    with pytest.raises(ValueError):
        diag.alpha_integral(CalabiProfile.initial(F1_MODEL), 1.5)


def test_fit_power_law_recovers_exponent():
    d = np.array([0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001])
    for K in (0.0, 1.0, 2.0):
        fit = diag.fit_power_law(d, 3.0 * d ** K * (1 + 0.8 * d))
        assert fit.slope == pytest.approx(K, abs=5e-3)
    plain = diag.fit_power_law(d, d * (1 + 0.8 * d), correction=False)
    assert abs(plain.slope - 1.0) > 0.01


def test_fit_window_too_short():
    model = ProductModel((2, 2), (1, 2))
    traj = solver.run(model, solver.SolverConfig(), [0.1, 0.2])
    fit = diag.fit_exponents(traj.records, traj.T, traj.t_stop)
    assert fit.K_fit is None and "window" in fit.skipped["K_fit"]


def test_fit_product_exponents(trajectory):
    for name, K in (("p1p1-collapse", 1), ("p1p1-shrink", 2)):
        traj = trajectory(name)
        fit = diag.fit_exponents(traj.records, traj.T, traj.t_stop)
        assert fit.K_fit.slope == pytest.approx(K, abs=0.05)
        assert fit.beta_fit.slope == pytest.approx(1.0, abs=0.05)


@pytest.mark.parametrize("table, expected", [
    ({2: -37.0, 3: -343.0}, True),
    ({2: -4.0, 3: -8.0}, False),     # above the floor
    ({2: -30.0, 3: -40.0}, False),   # ratio too small
    ({2: 1.0, 3: 1.0}, False),
    ({1: -2.0}, None),
])
def test_blowup_rule(table, expected):
    assert diag.blowup_detected(table, -10.0) is expected


def _records(lams):
    return [diag.DiagnosticsRecord(t=float(i), s=0.0, class_coords=(1.0,), volume_coh=1.0, volume_num=1.0,
                                   lambda_min=l, lambda_max=l, trace_max=l, sup_u=0, inf_u=0, sup_udot_u=0,
                                   inf_udot_u=0, metric_ratio_min=1, metric_ratio_max=1)
            for i, l in enumerate(lams)]


def test_verdicts_flag_inconsistency():
    summary = coh.summarize(coh.hirzebruch_f1_setup(1, 4))
    recs = _records([-0.33, -2.0, -37.0, -343.0])
    assert diag.verdicts(recs, summary).consistent
    bad = diag.verdicts(recs, summary, D_threshold=1e6)
    assert bad.violated == ["finite_noncollapsed_excludes_ricci_bound"]


def test_verdicts_infinite_time():
    summary = coh.summarize(coh.product_setup([-2, 0], [3, 1]))
    v = diag.verdicts(_records([-0.4, -0.9, -0.99]), summary)
    assert v.observables["singular_at_infinity"] and v.observables["lambda_min_ge_minus_one"]
    assert v.observables["c1_top_zero"] and v.observables["nef_restriction"]
    assert v.consistent
    assert diag.default_d_threshold(_records([-0.4])) == pytest.approx(4.0)
