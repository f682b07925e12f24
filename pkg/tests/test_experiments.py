import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from relfermi import experiments as ex
from relfermi import functionals as fn
from relfermi.errors import InsufficientRecords, InvariantViolation
from relfermi.minimizer import initial_set
from relfermi.spectral import make_grid
from relfermi.state import OrbitalSet, gram, translate


@pytest.fixture(scope="module")
def cfg():
    return ex.ExperimentConfig(n=16, L=16.0)


@pytest.fixture(scope="module")
def d1(cfg):
    return ex.estimate_D(1, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        ex.ExperimentConfig(dc="nope")
    c = ex.ExperimentConfig(n=16, L=8.0)
    assert c.grid().dc == "cell" and c.grid(L=3.0).L == 3.0


def test_estimate_D_unpacks(d1):
    D, opt = d1
    assert d1.all_converged
    assert D == d1.value and opt.size == 1
    assert_allclose(fn.lt_quotient(opt).quotient, D, rtol=1e-12)
    assert 2.5 < D < 3.1
    with pytest.raises(ValueError):
        ex.estimate_D(4)


def test_upsample_preserves_quotient(d1):
    fine = ex.upsample(d1.optimizer)
    assert fine.grid.n == 32 and fine.grid.L == d1.optimizer.grid.L
    # band-limited optimizers interpolate exactly: only the quadrature of rho^{4/3} changes
    assert_allclose(fn.lt_quotient(fine).quotient, d1.value, rtol=5e-3)


def test_box_doubled_keeps_values(d1):
    big = ex.box_doubled(d1.optimizer)
    assert big.grid.n == 32
    assert_allclose(big.grid.spacing, d1.optimizer.grid.spacing)
    assert_allclose(gram(big), np.eye(1), atol=1e-12)


def test_fit_arrays_recovers_power_law():
    D = 3.0
    a = D - np.geomspace(0.3, 0.01, 5)
    fit = ex.fit_arrays(a, 0.7 * (D - a) ** 0.5, "eps_law", D)
    assert_allclose([fit.exponent, fit.prefactor, fit.r_squared], [0.5, 0.7, 1.0], rtol=1e-12)
    efit = ex.fit_arrays(a, np.sqrt(2 * 6.0 * (D - a) / D), "energy_law", D)
    assert_allclose(efit.d_implied, 6.0, rtol=1e-12)
    with pytest.raises(InsufficientRecords):
        ex.fit_arrays(a[:3], a[:3], "eps_law", D)
    with pytest.raises(InvariantViolation):
        ex.fit_arrays(a, -np.ones(5), "eps_law", D)
    with pytest.raises(ValueError):
        ex.fit_arrays(a, a, "bogus", D)


@settings(max_examples=25, deadline=None)
@given(p=st.floats(0.1, 2.0), c=st.floats(0.01, 100.0))
def test_fit_arrays_exact_for_any_power(p, c):
    D = 2.9
    a = D - np.geomspace(0.5, 0.005, 6)
    fit = ex.fit_arrays(a, c * (D - a) ** p, "eps_law", D)
    assert_allclose(fit.exponent, p, rtol=1e-9)


def test_fit_window_uncertainty():
    recs = [ex.SweepRecord(a, a / 3, -1.0, 0.1, -1, -0.5, 0, 1, True, 32, 5.0, True) for a in (2.7, 2.8, 2.9, 2.95)]
    assert len(ex.fit_window(recs, 3.0, uncertainty=0.02)) == 3
    with pytest.raises(InsufficientRecords):
        ex.fit_scaling(recs, "eps_law", 3.0, uncertainty=0.02)


def test_sweep_record_row():
    r = ex.SweepRecord(2.0, 0.5, -0.3, 0.4, -0.2, -0.1, 1e-7, 10, True, 32, 8.0, True)
    row = r.row(4.0, 1.0, 2)
    assert list(row) == ["a", "D_minus_a", "E", "E_plus_2m", "eps", "mu1", "mu2", "converged"]
    assert row["D_minus_a"] == 2.0 and row["E_plus_2m"] == pytest.approx(1.7)
    assert r.eps_cells == pytest.approx(1.6)


def test_theta_rate():
    assert_allclose(ex.theta_rate([-0.5], 1.0), [np.sqrt(0.75)])
    assert np.isnan(ex.theta_rate([-2.5], 1.0)[0])


def test_tail_fit_synthetic():
    g = make_grid(32, 32.0)
    r = np.maximum(g.radius, 1e-9)
    alg = OrbitalSet((1.0 + r * r) ** -2.0 + 0j, g)
    fit = ex.tail_fit(alg)
    assert fit.kind == "algebraic"
    assert_allclose(fit.exponents[0], -4.0, atol=0.3)
    assert fit.r_squared[0] > 0.99
    expo = OrbitalSet(np.exp(-0.8 * r) + 0j, g)
    fit = ex.tail_fit(expo, massive=True, mu=[-0.2], m=1.0)
    assert_allclose(fit.exponents[0], 0.8, rtol=2e-2)
    assert_allclose(fit.reference_rate, [0.6])
    with pytest.raises(ValueError):
        ex.tail_fit(alg, window=(1.0, 10.0))


def test_principal_angles_and_profile_distance(d1):
    s = d1.optimizer
    assert_allclose(ex.principal_angles(s, s), 0.0, atol=1e-7)
    moved = s.with_orbitals(translate(s.orbitals, s.grid, (2.0, 1.0, 0.0)) * np.exp(0.3j))
    assert ex.profile_distance(s, moved) < 1e-6
    assert ex.profile_distance(s, initial_set(s.grid, 1, width=s.grid.L / 5)) > 0.1


def test_collapse_probe_asymptotic_slope(d1):
    D, base = d1
    # E(gamma_t) = t (1 - a/D) T - N m + O(1/t): the fitted slope error shrinks like 1/t^2
    errs = [ex.collapse_probe(1.1 * D, base, t_steps=j, D=D).summary()["slope_relative_error"] for j in (4, 6, 8)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-3
    tab = ex.collapse_probe(1.1 * D, base, t_steps=8, D=D)
    assert_allclose(tab.energy[-1] - tab.t[-1] * tab.expected_slope, -1.0, atol=5e-3)


def test_rank_splitting_table(d1):
    h = d1.optimizer.grid.spacing
    tab = ex.rank_splitting_check(d1.optimizer, [6 * h, 2 * h, 4 * h])
    assert_allclose(tab.R, [2 * h, 4 * h, 6 * h])
    assert np.all(np.diff(tab.overlap) < 0)
    s = tab.summary()
    assert {"deficit", "overlap_slope", "improving_R", "monotone_approach"} <= set(s)


def test_splitting_table_improving():
    t = ex.SplittingTable(np.array([1.0, 2, 3, 4]), np.array([3.0, 2.8, 2.7, 2.75]), np.ones(4), 2.9, -4, 1)
    assert t.improving.tolist() == [2.0, 3.0, 4.0]
    assert not t.monotone_approach()


def test_dstar_floor(cfg):
    d2 = ex.estimate_D(2, cfg)
    est = ex.estimate_dstar(cfg, d2)
    assert est.value >= ex.DSTAR_FLOOR
    assert est.dc_bias_doubled < est.dc_bias


def test_binding_and_energy_checks(cfg):
    c = ex.ExperimentConfig(n=16, L=16.0, box_tol=1e-3)
    res = ex.binding_check(0.5 * 2.95, 1.0, c, D_estimate=2.95)
    assert res.strict and res.margin > 0
    chk = ex.energy_checks(res.reports[0], 2, 1.0)
    assert all(chk.values())
    with pytest.raises(ValueError):
        ex.binding_check(0.0, 1.0, c)


def test_eigen_and_scf_cross_checks(cfg):
    c = ex.ExperimentConfig(n=16, L=16.0, box_tol=1e-3)
    rep = ex.ground_state(2, 1.5, 1.0, c, D_estimate=2.95)
    eig, ang = ex.eigen_cross_check(rep, 1.5, 1.0, c)
    assert_allclose(eig.eigenvalues, rep.mu, rtol=1e-5)
    assert np.max(ang) < 1e-3
    E, gap, _ = ex.scf_cross_check(rep, 1.5, 1.0, c)
    assert gap < 1e-6


def test_sweep_validation():
    with pytest.raises(ValueError):
        ex.sweep_a([0.9, 0.8], 1.0, D2=3.0)
    with pytest.raises(ValueError):
        ex.sweep_a([0.9, 1.0], 1.0, D2=3.0)


def test_virial_check_keys(d1):
    rep = ex.estimate_D(1, ex.ExperimentConfig(n=16, L=16.0)).reports[0]
    v = ex.virial_check(rep)
    assert v["residual"] < 1e-3
    assert_allclose(v["sum_mu"], -1 / 3, atol=1e-4)
