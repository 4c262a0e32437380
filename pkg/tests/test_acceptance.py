"""Acceptance criteria 1-11 at desk scale (unit square, resolution 128).

Each test records one line through the ``criterion`` fixture; the lines are
repeated in the terminal summary.  The full module takes several minutes.
"""

from pathlib import Path

import numpy as np
import pytest

from gcclab.analysis import (boundary_trace, decay_fit, interior_observability, lyapunov_check, stationary_audit)
from gcclab.cli import execute, replay, scenario
from gcclab.coarea import coarea_check, prism_bound_check
from gcclab.config import load_config
from gcclab.geometry import Domain, build_grid, first_dirichlet_eigenvalue
from gcclab.rays import RayState, trace_ray, unfolded_position
from gcclab.regions import check_epsilon_controllable, preset_region
from gcclab.wave import (DampingCoefficient, Nonlinearity, WaveOperator, gaussian_beam, random_data, sine_modes,
                         solve_linear, solve_semilinear)

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
EPS = {"0.05": "admissible_eps005", "0.1": "admissible_eps01", "0.2": "admissible_eps02"}
RES = 128


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """Lazily executed CLI runs keyed by (subcommand, config name, overrides)."""
    root = tmp_path_factory.mktemp("acceptance")
    cache = {}

    def get(sub, name, **overrides):
        key = (sub, name, tuple(sorted(overrides.items())))
        if key not in cache:
            raw = load_config(CONFIGS / f"{name}.yaml").to_dict()
            for path, value in overrides.items():
                cur = raw
                *head, last = path.split("__")
                for k in head:
                    cur = cur[k]
                cur[last] = value
            tag = "_".join([sub, name] + [f"{k}-{v}" for k, v in sorted(overrides.items())])
            cache[key] = execute(sub, load_config(raw), root / tag)
        return cache[key]

    return get


@pytest.fixture(scope="module")
def grid():
    return build_grid(Domain.unit_square(), RES)


@pytest.fixture(scope="module")
def regression_traces():
    return []


def test_c01_region_construction(runs, criterion):
    ok, parts = True, []
    for eps, name in EPS.items():
        r = runs("region", name)
        c = r.constants
        good = (r.verdicts["measure_below_epsilon"] and r.verdicts["escape_conditions"] and r.verdicts["decomposition"]
                and c["measure_total"] < float(eps))
        ok &= good
        parts.append(f"eps={eps}: meas={c['measure_total']:.5f} build={c['build_resolution']} d1-d4={r.verdicts['escape_conditions']}")
    assert criterion(1, ok, "; ".join(parts))


def test_c02_reference_trichotomy(runs, grid, criterion):
    om1 = preset_region("omega1", grid)
    m1 = om1.measure
    fails = all(not check_epsilon_controllable(om1, e)[0] for e in (0.5, 1.0, 1.5, 2.0))
    g2 = runs("gcc", "omega2")
    g3 = runs("gcc", "omega3")
    ok = fails and m1.boundary == 4.0 and g2.verdicts["gcc"] and g3.constants["trapped"] > 0 and g3.constants["T"] == 100.0
    detail = (f"omega1 boundary={m1.boundary:g} total={m1.total:.4f} not controllable for eps<=2: {fails}; "
              f"omega2 gcc={g2.verdicts['gcc']} T_hat={g2.constants['T_hat']:.3f}; "
              f"omega3 trapped={g3.constants['trapped']} at t_max=100")
    assert criterion(2, ok, detail)


def test_c03_gcc_pipeline(runs, criterion):
    ok, parts = True, []
    for eps, name in EPS.items():
        r = runs("gcc", name)
        rep = r.reports["gcc"]
        good = r.verdicts["gcc"] and rep["trapped"] == 0 and rep["samples"] >= 32 * 32 * 64
        good &= r.constants["T"] == runs("region", name).constants["T_gcc"]
        ok &= good
        parts.append(f"eps={eps}: T={r.constants['T']:.4f} T_hat={rep['T_hat']:.4f} misses={rep['trapped']} "
                     f"samples={rep['samples']}")
    assert criterion(3, ok, "; ".join(parts))


def test_c04_billiard_exactness(criterion):
    sq = Domain.unit_square()
    x0, d = np.array([0.3, 0.41]), np.array([np.cos(0.7), np.sin(0.7)])
    r = trace_ray(sq, RayState(x0, d), t_max=40.0)
    unfold = float(np.abs(r.final.x - unfolded_position(x0, d, 40.0)).max())
    back = trace_ray(sq, RayState(r.final.x, -r.final.p), t_max=40.0)
    rev = float(np.abs(back.final.x - x0).max())
    ok = len(r.events) >= 50 and unfold <= 1e-10 and rev < 1e-9
    assert criterion(4, ok, f"reflections={len(r.events)} unfolding error={unfold:.2e} reversal error={rev:.2e}")


def _radial(grid):
    r = lambda x, y: np.hypot(x - 0.5, y - 0.5)  # noqa: E731

    def gr(x, y):
        d = np.maximum(r(x, y), 1e-300)
        return (x - 0.5) / d, (y - 0.5) / d

    return coarea_check(r, gr, 1.0, grid, 256).rel_error


def test_c05_coarea_and_prism(runs, grid, criterion):
    c = runs("coarea", "admissible_eps01")
    lin = coarea_check(lambda x, y: x, lambda x, y: (np.ones_like(x), 0 * x), 1.0, grid, 256)
    quad = [coarea_check(lambda x, y: x**2, lambda x, y: (2 * x, 0 * x), 1.0, build_grid(Domain.unit_square(), r), 256).rel_error
            for r in (RES, 2 * RES)]
    rad = [_radial(build_grid(Domain.unit_square(), r)) for r in (RES, 2 * RES)]
    halves = quad[1] <= max(quad[0] / 2, 1e-12) and rad[1] <= rad[0] / 2
    ok = abs(lin.lhs - 1) <= 1e-12 and abs(lin.rhs - 1) <= 1e-12 and quad[0] < 1e-2 and halves
    ok &= c.verdicts["prism_chain"]
    # |grad w|^2 snapshots of a wave on each admissible region, boundary value (dw/dnu)^2
    snaps_ok, n_snap = True, 0
    op = WaveOperator(grid)
    u0, u1 = random_data(grid, 5, 1, op=op)
    traj = solve_linear(grid, u0, u1, T=1.0, snap_every=64, op=op)
    for name in EPS.values():
        omega = scenario(load_config(CONFIGS / f"{name}.yaml")).resolve_region()
        gamma = boundary_trace(omega)
        one = prism_bound_check(gamma, omega, lambda x, y: np.ones_like(x), grid)
        snaps_ok &= one.chain_ok
        for k in range(traj.u.shape[0]):
            u = traj.u[k, :, 0]
            f = op.grad_density(u).reshape(grid.shape)
            if f[omega.cells].sum() == 0:
                continue
            rep = prism_bound_check(gamma, omega, f, grid, f_boundary=op.normal_derivative(u) ** 2)
            snaps_ok &= rep.chain_ok
            n_snap += 1
    ok &= snaps_ok
    detail = (f"x1: lhs={lin.lhs:.15f} rhs={lin.rhs:.15f}; x1^2 rel={quad[0]:.2e}->{quad[1]:.2e}; "
              f"radial rel={rad[0]:.2e}->{rad[1]:.2e}; prism f=1 and {n_snap} |grad w|^2 snapshots: {snaps_ok}")
    assert criterion(5, ok, detail)


def test_c06_solver(runs, grid, regression_traces, criterion):
    phi = sine_modes(grid, [(1, 1)])[:, :, 0]
    traj = solve_linear(grid, phi, np.zeros_like(phi), T=1.0, cfl=0.25)
    exact = np.cos(np.sqrt(2) * np.pi) * phi
    l2 = float(np.sqrt(((traj.final.u - exact) ** 2).sum() / (phi**2).sum()))
    cons = runs("simulate", "conservative")
    semi = runs("simulate", "semilinear")
    lam = first_dirichlet_eigenvalue(grid)
    lam_err = abs(lam - 2 * np.pi**2) / (2 * np.pi**2)
    ok = (l2 < 1e-2 and cons.verdicts["energy_drift"] and cons.constants["T"] == 10.0 and semi.verdicts["residual_rate"]
          and lam_err < 1e-2)
    regression_traces.extend([("conservative", cons.verdicts["energy_nonincreasing"]),
                              ("semilinear", semi.verdicts["energy_nonincreasing"])])
    detail = (f"eigenmode L2 error={l2:.2e}; drift over [0,10]={cons.constants['energy_drift']:.2e}; "
              f"semilinear residual rate={semi.constants['residual_rate']:.2e}; lambda1 rel error={lam_err:.2e}")
    assert criterion(6, ok, detail)


def test_c07_observability(runs, grid, criterion):
    ok, parts = True, []
    for eps, name in EPS.items():
        r = runs("observe", "observe_eps01", region__epsilon=float(eps), region__epsilon0=float(eps) / 2)
        c = r.constants
        good = r.verdicts["interior_observability"] and r.verdicts["bridge"] and c["ensemble"] == 64 and c["k_hat_T"] > 1e-6
        ok &= good
        parts.append(f"eps={eps}: k_hat={c['k_hat_T']:.4g} bridge={r.verdicts['bridge']}")
    # trapped standing beams on the strip, width sigma = 1/sqrt(pi n) so that n sigma^2 is fixed
    om3 = preset_region("omega3", grid)
    op = WaveOperator(grid)
    ratios = []
    for n in (8, 16, 32):
        data = gaussian_beam(grid, np.sqrt(1 / (np.pi * n)), n, op=op)
        ratios.append(interior_observability(grid, om3, 2 * np.sqrt(2), data, op=op).k_hat)
    mono = ratios[0] > ratios[1] > ratios[2]
    ok &= mono
    parts.append("beam ratios " + " > ".join(f"{v:.4g}" for v in ratios) + f": {mono}")
    assert criterion(7, ok, "; ".join(parts))


def test_c08_gradient_structure(runs, grid, regression_traces, criterion):
    for name in ("decay_omega2", "decay_omega3"):
        regression_traces.append((name, runs("simulate", name).verdicts["energy_nonincreasing"]))
    lam = first_dirichlet_eigenvalue(grid)
    nl = Nonlinearity.cubic(kappa=2 * lam)
    audit = stationary_audit(nl, grid, n_seeds=5, lam1=lam)
    damp = DampingCoefficient.on_region(preset_region("omega2", grid), 1.0)
    worst_v, status = 0.0, []
    for e in audit.equilibria:
        u = e.u.reshape(grid.shape)
        traj = solve_semilinear(grid, u, np.zeros_like(u), damp, nl, T=1.0, lam1=lam, snap_every=32)
        rep = lyapunov_check(traj, damp, nl)
        regression_traces.append((f"equilibrium{e.seed}", rep.monotone))
        status.append(rep.status)
        worst_v = max(worst_v, rep.omega_velocity if rep.omega_velocity is not None else np.inf)
    mono = all(v for _, v in regression_traces)
    ok = mono and len(audit.equilibria) >= 1 and all(s == "stationary" for s in status) and worst_v < 1e-8
    detail = (f"non-increasing in {len(regression_traces)} runs: {mono}; {len(audit.equilibria)} equilibria, "
              f"max omega-trace |u_t|={worst_v:.2e}, bound |grad u|^2<=2c_f: {audit.bound_ok}")
    assert criterion(8, ok, detail)


def test_c09_quasi_stability(runs, criterion):
    q = runs("quasistab", "quasistab")
    lin = runs("quasistab", "quasistab_linear")
    c = q.constants
    ok = (q.verdicts["quasi_stability"] and np.isfinite(c["C_B_hat"]) and c["zeta_hat"] > 0 and c["margin"] >= 0
          and c["pairs"] == 10 and q.verdicts["sandwich"] and abs(c["beta1"] - 1.5498) < 1e-4)
    ok &= lin.verdicts["window_composition"] and lin.constants["window_spread"] <= 0.1 and lin.verdicts["sandwich"]
    detail = (f"zeta_hat={c['zeta_hat']:.4g} C_B={c['C_B_hat']:.4g} margin={c['margin']:.2e}; "
              f"sandwich beta1={c['beta1']:.4f} ok={q.verdicts['sandwich']}; "
              f"window spread={lin.constants['window_spread']:.3f} zeta_window={lin.constants['zeta_window']:.4f}")
    assert criterion(9, ok, detail)


def test_c10_negative_control(grid, regression_traces, criterion):
    op = WaveOperator(grid)
    lam = first_dirichlet_eigenvalue(grid)
    beam = gaussian_beam(grid, 0.2, 32, op=op)
    rates = {}
    for name in ("omega2", "omega3"):
        damp = DampingCoefficient.on_region(preset_region(name, grid), 1.0)
        traj = solve_semilinear(grid, *beam, damp, Nonlinearity.zero(), T=20.0, lam1=lam, op=op)
        rates[name] = decay_fit(traj.trace.t_half, traj.trace.E).rate
        regression_traces.append((f"beam_{name}", lyapunov_check(traj, damp, Nonlinearity.zero()).monotone))
    damp2 = DampingCoefficient.on_region(preset_region("omega2", grid), 1.0)
    u0, u1 = random_data(grid, 7, 8, op=op)
    tr = solve_semilinear(grid, u0, u1, damp2, Nonlinearity.zero(), T=20.0, lam1=lam, op=op).trace
    random2 = min(decay_fit(tr.t_half, tr.E[:, b]).rate for b in range(8))
    matched = rates["omega3"] / rates["omega2"]
    ok = matched < 0.1 and rates["omega3"] < 0.1 * random2
    detail = (f"beam rate omega3={rates['omega3']:.4g} omega2={rates['omega2']:.4g} ratio={matched:.3f}; "
              f"slowest omega2 random datum={random2:.4g} ratio={rates['omega3'] / random2:.3f}")
    assert criterion(10, ok, detail)


def test_c11_determinism(runs, criterion):
    picks = [("region", "admissible_eps02"), ("gcc", "omega3"), ("coarea", "admissible_eps01"),
             ("simulate", "semilinear"), ("simulate", "decay_omega3")]
    bad = []
    for sub, name in picks:
        same, mism = replay(runs(sub, name).out / "manifest.json")
        if not same:
            bad.append(f"{sub}/{name}: {mism}")
    assert criterion(11, not bad, f"{len(picks)} manifests replayed, mismatches: {bad or 'none'}")
