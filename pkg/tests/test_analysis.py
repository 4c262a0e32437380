import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from gcclab.analysis import (boundary_observability, decay_fit, default_horizon, interior_observability, lyapunov_check,
                             observe, pair_data, perturbed_energy_diagnostics, quasi_stability_fit, run_pairs,
                             stationary_audit, transfer_region, unique_continuation_probe, window_contractions)
from gcclab.geometry import Domain, build_grid, first_dirichlet_eigenvalue
from gcclab.regions import ControlRegion, frame_region, preset_region, whole_region
from gcclab.wave import DampingCoefficient, Nonlinearity, random_data, sine_modes, solve_semilinear


@pytest.fixture(scope="module")
def g32():
    return build_grid(Domain.unit_square(), 32)


def _mode(g):
    phi = sine_modes(g, [(1, 1)])
    return phi, np.zeros_like(phi)


def test_default_horizon(g32):
    assert_allclose(default_horizon(g32), 2 * np.sqrt(2))
    assert default_horizon(g32, 5.0) == 5.0


def test_whole_domain_ratio_is_quarter_horizon(g32):
    T = 2.0
    rep = interior_observability(g32, whole_region(g32), T, _mode(g32))
    w = np.sqrt(first_dirichlet_eigenvalue(g32))
    exact = (T / 2 + np.sin(2 * w * T) / (4 * w)) / 2
    assert_allclose(rep.k_hat, exact, rtol=1e-3)
    assert abs(rep.k_hat - T / 4) < 0.05


def test_zero_datum_is_excluded(g32):
    phi, z = _mode(g32)
    data = (np.concatenate([phi, 0 * phi], -1), np.concatenate([z, z], -1))
    om = frame_region(g32, 0.1)
    run = observe(g32, om, 1.0, data)
    rep = interior_observability(g32, om, 1.0, data, run=run)
    assert rep.excluded == [1] and rep.size == 1
    uc = unique_continuation_probe(g32, om, 1.0, data, run=run)
    assert uc.zero_data == [1] and uc.consistent and uc.ratios[1] == 0.0


def test_empty_boundary_part(g32):
    om = preset_region("omega2", g32)
    rep = boundary_observability(g32, np.zeros(len(g32.segments), bool), om, 1.0, random_data(g32, 1, 2))
    assert rep.observability.k_hat == 0.0
    assert rep.passed is False and rep.bridge_ok.all()


def test_bridge_on_frame(g32):
    om = frame_region(g32, 0.1)
    gamma = g32.segment_cells_mask(om.cells)
    rep = boundary_observability(g32, gamma, om, 1.5, random_data(g32, 3, 4))
    assert rep.bridge_ok.all() and rep.chain_ok.all()


def test_transfer_is_outer(g32):
    fine = build_grid(Domain.unit_square(), 64)
    om = preset_region("omega2", fine)
    coarse = transfer_region(om, g32)
    X, Y = fine.centers()
    i = np.floor(X[om.cells] / g32.h).astype(int)
    j = np.floor(Y[om.cells] / g32.h).astype(int)
    assert coarse.cells[i, j].all()


def test_lyapunov_cases(g32):
    zero = np.zeros(g32.shape)
    damp = DampingCoefficient.on_region(frame_region(g32, 0.1), 1.0)
    still = solve_semilinear(g32, zero, zero, damp, Nonlinearity.cubic(), T=0.5)
    assert lyapunov_check(still, damp, Nonlinearity.cubic()).status == "stationary"
    u0, u1 = random_data(g32, 4)
    free = solve_semilinear(g32, u0, u1, DampingCoefficient.none(g32), Nonlinearity.cubic(), T=0.5)
    assert lyapunov_check(free, DampingCoefficient.none(g32), Nonlinearity.cubic()).status.startswith("no damping")
    moving = solve_semilinear(g32, u0, u1, damp, Nonlinearity.cubic(), T=0.5)
    rep = lyapunov_check(moving, damp, Nonlinearity.cubic())
    assert rep.status == "strictly decreasing" and rep.passed


def test_stationary_audit_cubic(g32):
    rep = stationary_audit(Nonlinearity.cubic(), g32)
    assert rep.c_f == 0.0 and rep.bound_ok
    assert len(rep.equilibria) == 1 and np.abs(rep.equilibria[0].u).max() < 1e-10


def test_stationary_audit_above_first_eigenvalue(g32):
    lam = first_dirichlet_eigenvalue(g32)
    rep = stationary_audit(Nonlinearity.cubic(kappa=2 * lam), g32, n_seeds=5)
    assert rep.c_f > 0 and rep.bound_ok
    assert len(rep.equilibria) >= 3


def test_stationary_audit_rejects_bad_source(g32):
    with pytest.raises(ValueError):
        stationary_audit(Nonlinearity.linear(-40.0), g32)


def test_sandwich_constants(g32):
    lam = 2 * np.pi**2
    z1, z2 = pair_data(g32, 0, 2)
    run = run_pairs(g32, z1, z2, DampingCoefficient.on_region(preset_region("omega2", g32), 2.0), Nonlinearity.cubic(), 0.5)
    d = perturbed_energy_diagnostics(run, 2.0, 1.0, lam, 2.0, 1.0)
    assert_allclose(d.beta1, 2 - 2 / np.sqrt(lam), rtol=1e-14)
    assert_allclose(d.beta2, 2 + 2 / np.sqrt(lam), rtol=1e-14)
    assert_allclose(d.beta1, 1.5498, atol=1e-4)
    assert d.sandwich_ok
    with pytest.raises(ValueError, match="2/\\(a0 m1\\)"):
        perturbed_energy_diagnostics(run, 2.0, 1.0, lam, 1.0, 1.0)


def test_identical_pairs_are_degenerate():
    t = np.linspace(0, 1, 11)
    rep = quasi_stability_fit(t, np.zeros((11, 3)), np.zeros((11, 3)))
    assert rep.degenerate and rep.passed and rep.C_B_hat == 0.0


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(1e-3, 1e3))
def test_pure_contraction_fit(rate, scale):
    t = np.linspace(0, 4, 81)
    D2 = scale * np.exp(-rate * t)
    rep = quasi_stability_fit(t, D2, 0.01 * D2, zetas=np.linspace(0.01, 10, 1000))
    assert rep.passed and rep.margin >= 0
    assert rep.zeta_contraction <= rate + 1e-12
    assert rep.zeta_contraction > rate - 0.011


def test_window_composition():
    t = np.linspace(0, 3, 301)
    D2 = np.stack([np.exp(-2 * t), 3 * np.exp(-2 * t)], 1)
    w = window_contractions(t, D2, 1.0, 3)
    assert_allclose(w.gammas, np.exp(-2.0), rtol=1e-12)
    assert_allclose(w.zeta, 2.0, rtol=1e-12)
    assert w.agree
    with pytest.raises(ValueError):
        window_contractions(t, D2, 1.5, 3)


def test_decay_fit_exact():
    t = np.linspace(0, 10, 101)
    fit = decay_fit(t, 2.5 * np.exp(-0.3 * t))
    assert_allclose(fit.rate, 0.3, rtol=1e-12)
    assert fit.residual < 1e-12 and fit.points == 101
    win = decay_fit(t, np.where(t < 5, np.exp(-t), np.exp(-5) * np.exp(-0.1 * (t - 5))), window=(5, 10))
    assert_allclose(win.rate, 0.1, rtol=1e-10)
    with pytest.raises(ValueError):
        decay_fit(t, np.exp(-t), window=(20, 30))


def test_region_from_cells_measure(g32):
    om = ControlRegion.from_cells(g32, np.zeros(g32.shape, bool))
    assert om.measure.total == 0.0


def test_window_exponent_is_twice_norm_decay(g32):
    # uniform damping a = 1: the squared difference norm contracts at twice the decay exponent of the energy norm
    damp, nl = DampingCoefficient.uniform(g32, 1.0), Nonlinearity.zero()
    T = 6 * np.sqrt(2)
    z1, z2 = pair_data(g32, 13, 10)
    pr = run_pairs(g32, z1, z2, damp, nl, T)
    wc = window_contractions(pr.t, pr.D2, T / 3, 3)
    u0, u1 = random_data(g32, 13, 10)
    tr = solve_semilinear(g32, u0, u1, damp, nl, T=T).trace
    norm_rate = np.mean([decay_fit(tr.t_half, np.sqrt(tr.E[:, b])).rate for b in range(10)])
    assert wc.agree
    assert abs(wc.zeta - 2 * norm_rate) <= 0.2 * 2 * norm_rate
