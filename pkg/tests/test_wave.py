import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from gcclab.geometry import Domain, build_grid, first_dirichlet_eigenvalue
from gcclab.wave import (CFLViolation, DampingCoefficient, HypothesisViolation, Nonlinearity, WaveField, WaveOperator,
                         audit_nonlinearity, energy, energy_bounds_check, lipschitz_dependence, random_data, sine_modes,
                         solve_linear, solve_semilinear, time_step)

LAM = 2 * np.pi**2


@pytest.fixture(scope="module")
def g32():
    return build_grid(Domain.unit_square(), 32)


def _mode(g):
    return sine_modes(g, [(1, 1)])[:, :, 0]


def _mode_error(res, T=1.0):
    g = build_grid(Domain.unit_square(), res)
    phi = _mode(g)
    traj = solve_linear(g, phi, np.zeros_like(phi), T=T)
    exact = np.cos(np.sqrt(LAM) * T) * phi
    return np.abs(traj.final.u - exact).max() / np.abs(phi).max()


def test_eigenmode_oscillation():
    assert _mode_error(32) < 1e-2


def test_second_order_convergence():
    assert _mode_error(16) / _mode_error(32) >= 3.5


def test_conservative_energy_drift(g32):
    u0, u1 = random_data(g32, seed=3)
    traj = solve_semilinear(g32, u0, u1, DampingCoefficient.none(g32), Nonlinearity.zero(), T=5.0)
    E = traj.trace.E
    assert np.abs(E - E[0]).max() / E[0] < 1e-6


def test_damped_mode_oracle(g32):
    a = 0.8
    phi = _mode(g32)
    lam = first_dirichlet_eigenvalue(g32)
    T = 2.0
    traj = solve_semilinear(g32, phi, np.zeros_like(phi), DampingCoefficient.uniform(g32, a), Nonlinearity.zero(), T=T,
                            lam1=lam)
    wd = np.sqrt(lam - a * a / 4)
    y = np.exp(-a * T / 2) * (np.cos(wd * T) + a / (2 * wd) * np.sin(wd * T))
    amp = (traj.final.u * phi).sum() / (phi * phi).sum()
    assert abs(amp - y) < 1e-2


def test_dirichlet_cells_stay_zero():
    g = build_grid(Domain.polygon([(0, 0), (1, 0), (0.7, 0.9), (0.1, 0.6)]), 32)
    u0, u1 = random_data(g, seed=1)
    traj = solve_semilinear(g, u0, u1, DampingCoefficient.none(g), Nonlinearity.cubic(), T=1.0)
    assert np.all(traj.final.u[~g.inside] == 0.0)
    assert np.all(traj.final.v[~g.inside] == 0.0)


def test_energy_of_sine_mode():
    g = build_grid(Domain.unit_square(), 128)
    phi = _mode(g)
    E, tot = energy(WaveField(phi, np.zeros_like(phi)), grid=g)
    assert_allclose(E, np.pi**2 / 4, rtol=1e-3)
    _, tot = energy(WaveField(phi, np.zeros_like(phi)), Nonlinearity.cubic(), grid=g)
    assert_allclose(tot - E, 9 / 256, rtol=1e-6)


def test_audits():
    assert audit_nonlinearity(Nonlinearity.cubic(), LAM).passed
    assert audit_nonlinearity(Nonlinearity.zero(), LAM).passed
    assert audit_nonlinearity(Nonlinearity.cubic().with_arctan_damping(0.5), LAM).passed
    bad = audit_nonlinearity(Nonlinearity.linear(-2 * LAM), LAM)
    assert not bad.f2_ok and bad.f0_ok and bad.f1_ok


def test_rejected_source_raises(g32):
    phi = _mode(g32)
    with pytest.raises(HypothesisViolation):
        solve_semilinear(g32, phi, phi, DampingCoefficient.none(g32), Nonlinearity.linear(-2 * LAM), T=0.1)


def test_cfl(g32):
    with pytest.raises(CFLViolation):
        time_step(g32, 1.0, cfl=0.8)
    with pytest.raises(CFLViolation):
        time_step(g32, 1.0, dt=g32.h)
    dt, n = time_step(g32, 1.0, cfl=0.5)
    assert n == 64 and dt * n == 1.0


def test_residual_and_bounds(g32):
    u0, u1 = random_data(g32, seed=5, norm=3.0)
    nl = Nonlinearity.cubic()
    lam = first_dirichlet_eigenvalue(g32)
    traj = solve_semilinear(g32, u0, u1, DampingCoefficient.uniform(g32, 1.0), nl, T=3.0, lam1=lam)
    assert traj.trace.max_residual_rate() < 1e-4
    assert np.all(np.diff(traj.trace.totalE) <= 1e-12 * traj.trace.totalE[0])
    rep = energy_bounds_check(traj.trace, nl, lam)
    assert rep.passed
    # F >= 0 gives the full margin delta = lam1, so beta = 1/2
    assert_allclose(rep.beta_construction, 0.5)


def test_arctan_damping_dissipates(g32):
    u0, u1 = random_data(g32, seed=8)
    traj = solve_semilinear(g32, u0, u1, DampingCoefficient.uniform(g32, 1.0),
                            Nonlinearity.cubic().with_arctan_damping(0.5), T=2.0)
    tot = traj.trace.totalE
    assert tot[-1] < tot[0]
    assert traj.trace.max_residual_rate() < 1e-4


def test_lipschitz_degenerate(g32):
    u0, u1 = random_data(g32, seed=2)
    z = (u0[:, :, 0], u1[:, :, 0])
    rep = lipschitz_dependence(g32, z, z, DampingCoefficient.uniform(g32, 1.0), Nonlinearity.cubic(), 1.0)
    assert rep.degenerate and rep.D_hat == 0.0


@settings(max_examples=5, deadline=None)
@given(st.floats(0.1, 10.0))
def test_lipschitz_linear_scale_free(s):
    g = build_grid(Domain.unit_square(), 16)
    u0, u1 = random_data(g, seed=4, count=2)
    z1 = (u0[:, :, 0], u1[:, :, 0])
    z2 = (u0[:, :, 1], u1[:, :, 1])
    damp, nl = DampingCoefficient.uniform(g, 1.0), Nonlinearity.zero()
    a = lipschitz_dependence(g, z1, z2, damp, nl, 1.0)
    b = lipschitz_dependence(g, (s * z1[0], s * z1[1]), (s * z2[0], s * z2[1]), damp, nl, 1.0)
    assert_allclose(a.D_hat, b.D_hat, rtol=1e-2)
    assert a.gronwall_ok and a.D_hat <= 1.0 + 1e-9


def test_lipschitz_cap(g32):
    u0, u1 = random_data(g32, seed=2, norm=5.0)
    z = (u0[:, :, 0], u1[:, :, 0])
    with pytest.raises(ValueError):
        lipschitz_dependence(g32, z, z, DampingCoefficient.none(g32), Nonlinearity.cubic(), 1.0, norm_cap=1.0)


def test_operator_norms(g32):
    phi = _mode(g32)
    op = WaveOperator(g32)
    assert_allclose(op.l2sq(phi.ravel()), 0.25, rtol=1e-12)
    assert_allclose(op.grad_sq(phi.ravel()), LAM / 4, rtol=1e-2)
