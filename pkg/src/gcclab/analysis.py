"""Numerical audits of observability, gradient structure and quasi-stability.

Every constant here is estimated from simulations.  Verdicts are
property-based: positivity, finiteness, and inequalities holding at every
output time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coarea import prism_bound_check
from .geometry import Grid, first_dirichlet_eigenvalue
from .regions import ControlRegion
from .wave import (DampingCoefficient, Nonlinearity, PotentialPair, WaveOperator, audit_nonlinearity, hnorm2,
                   solve_linear, solve_semilinear, time_step)


def default_horizon(grid: Grid, T_gcc: float | None = None) -> float:
    """max(2 diameter, potential-based GCC time)."""
    T = 2.0 * grid.domain.diameter / grid.domain.speed.c_min
    return max(T, T_gcc) if T_gcc is not None else T


def transfer_region(region: ControlRegion, grid: Grid, name: str | None = None) -> ControlRegion:
    """Outer approximation of a region on another grid over the same domain.

    A target cell is included when it meets any source cell of the region.
    """
    src = region.grid
    xs0 = src.origin[0] + np.arange(src.nx) * src.h
    ys0 = src.origin[1] + np.arange(src.ny) * src.h
    ii = np.floor((xs0 - grid.origin[0]) / grid.h + 1e-9).astype(int)
    jj = np.floor((ys0 - grid.origin[1]) / grid.h + 1e-9).astype(int)
    ii2 = np.floor((xs0 + src.h - grid.origin[0]) / grid.h - 1e-9).astype(int)
    jj2 = np.floor((ys0 + src.h - grid.origin[1]) / grid.h - 1e-9).astype(int)
    cells = np.zeros(grid.shape, dtype=bool)
    I, J = np.nonzero(region.cells)
    for a in (ii, ii2):
        for b in (jj, jj2):
            x, y = np.clip(a[I], 0, grid.nx - 1), np.clip(b[J], 0, grid.ny - 1)
            cells[x, y] = True
    cells &= grid.inside
    return ControlRegion.from_cells(grid, cells, epsilon=region.epsilon, epsilon0=region.epsilon0, tag=region.tag,
                                    name=name or region.name)


def boundary_trace(region: ControlRegion) -> np.ndarray:
    """Boundary segments whose adjacent cell lies in the region (the set omega ∩ ∂M)."""
    return region.grid.segment_cells_mask(region.cells)


# ---------------------------------------------------------------------------
# observation runs


@dataclass
class ObservationRun:
    T: float
    dt: float
    steps: int
    omega_grad: np.ndarray
    omega_energy: np.ndarray
    global_energy: np.ndarray
    boundary: np.ndarray
    denom: np.ndarray
    omega_sup: np.ndarray
    global_sup: np.ndarray
    cell_integrals: np.ndarray | None = field(default=None, repr=False)
    segment_integrals: np.ndarray | None = field(default=None, repr=False)


def observe(grid: Grid, omega: ControlRegion, T: float, data, potentials: PotentialPair | None = None,
            gamma: np.ndarray | None = None, dt: float | None = None, cfl: float = 0.5, keep_integrals: bool = False,
            op: WaveOperator | None = None) -> ObservationRun:
    """Solve the linear system for each datum and accumulate space-time integrals by the trapezoid rule."""
    op = op or WaveOperator(grid)
    dt, n = time_step(grid, T, dt, cfl)
    om = omega.cells.ravel()
    gam = np.zeros(len(grid.segments.length), bool) if gamma is None else np.asarray(gamma, bool)
    ell = grid.segments.length
    h2 = op.h**2
    u0, u1 = data
    B = np.asarray(u0).reshape(op.N, -1).shape[1]
    acc = {k: np.zeros(B) for k in ("og", "oe", "ge", "bd", "osup", "gsup")}
    cells = np.zeros((op.N, B)) if keep_integrals else None
    segs = np.zeros((len(ell), B)) if keep_integrals else None
    N_end = {}

    wshare = op.face_share(om) * op.fo.weight

    def monitor(k, t, u, w):
        wt = dt * (0.5 if k in (0, n) else 1.0)
        du = op.face_diff(u)
        og = np.einsum("i,ij,ij->j", wshare, du, du)
        w_om = w[om]
        vo = np.einsum("ij,ij->j", w_om, w_om) * h2
        acc["og"] += wt * og
        acc["oe"] += wt * (og + vo)
        acc["ge"] += wt * (op.grad_sq(u) + op.l2sq(w))
        dn = op.normal_derivative(u) ** 2
        acc["bd"] += wt * (dn[gam] * ell[gam, None]).sum(0)
        mag = np.abs(u)
        mag += np.abs(w)
        if om.any():
            acc["osup"] = np.maximum(acc["osup"], mag[om].max(0))
        acc["gsup"] = np.maximum(acc["gsup"], mag.max(0))
        if keep_integrals:
            cells[:] += wt * (op.fo.owner @ op.face_density(u))
            segs[:] += wt * dn
        if k in (0, n):
            N_end[k] = op.grad_sq(u) + op.l2sq(w)
        return 0.0

    solve_linear(grid, u0, u1, potentials, T=T, dt=dt, monitors={"obs": monitor}, op=op)
    return ObservationRun(T, dt, n, acc["og"], acc["oe"], acc["ge"], acc["bd"], N_end[0] + N_end[n], acc["osup"], acc["gsup"],
                          cells, segs)


@dataclass
class ObservabilityReport:
    T: float
    ratios: np.ndarray
    k_hat: float
    worst: int
    excluded: list
    threshold: float
    label: str = ""

    @property
    def size(self) -> int:
        return int(len(self.ratios))

    @property
    def passed(self) -> bool:
        return self.size > 0 and self.k_hat > self.threshold

    def summary(self) -> dict:
        return {"label": self.label, "T": self.T, "ensemble": self.size, "k_hat": self.k_hat, "worst": self.worst,
                "excluded": self.excluded, "passed": self.passed}


def _ratios(num, denom, threshold, T, label):
    keep = denom > 0
    excluded = [int(i) for i in np.nonzero(~keep)[0]]
    r = np.where(keep, num / np.where(keep, denom, 1.0), np.nan)
    valid = r[keep]
    if valid.size == 0:
        return ObservabilityReport(T, valid, 0.0, -1, excluded, threshold, label)
    idx = np.nonzero(keep)[0]
    j = int(np.argmin(valid))
    return ObservabilityReport(T, valid, float(valid[j]), int(idx[j]), excluded, threshold, label)


def interior_observability(grid: Grid, omega: ControlRegion, T: float, data, potentials: PotentialPair | None = None,
                           threshold: float = 1e-6, run: ObservationRun | None = None, **kw) -> ObservabilityReport:
    """k_T estimate: min over data of int_0^T int_omega |grad w|^2 / (N(0) + N(T)), N = |(w, w_t)|^2."""
    run = run or observe(grid, omega, T, data, potentials, **kw)
    return _ratios(run.omega_grad, run.denom, threshold, T, f"interior:{omega.name}")


@dataclass
class BoundaryObservabilityReport:
    observability: ObservabilityReport
    interior_ratios: np.ndarray
    bridge_constants: np.ndarray
    chain_ok: np.ndarray
    bridge_ok: np.ndarray

    @property
    def passed(self) -> bool:
        return self.observability.passed and bool(self.bridge_ok.all())


def boundary_observability(grid: Grid, gamma: np.ndarray, omega: ControlRegion, T: float, data,
                           potentials: PotentialPair | None = None, threshold: float = 1e-6,
                           run: ObservationRun | None = None, **kw) -> BoundaryObservabilityReport:
    """Boundary ratio int_0^T int_gamma (dw/dnu)^2 / (N(0) + N(T)) and the prism bridge to omega.

    For each datum the prism chain is evaluated on the time-integrated fields
    f = int |grad w|^2 (cells) and int (dw/dnu)^2 (segments).  The bridge
    constant C is the chain's right side over int_omega f, and the bridge
    holds when boundary ratio <= C * interior ratio.
    """
    gamma = np.asarray(gamma, bool)
    if run is None or run.cell_integrals is None:
        run = observe(grid, omega, T, data, potentials, gamma=gamma, keep_integrals=True, **kw)
    rep = _ratios(run.boundary, run.denom, threshold, T, f"boundary:{omega.name}")
    keep = run.denom > 0
    B = run.cell_integrals.shape[1]
    consts, chains, bridges = np.full(B, np.nan), np.zeros(B, bool), np.zeros(B, bool)
    interior = np.where(keep, run.omega_grad / np.where(keep, run.denom, 1.0), np.nan)
    for b in np.nonzero(keep)[0]:
        if not gamma.any():
            chains[b] = bridges[b] = True
            consts[b] = 0.0
            continue
        pr = prism_bound_check(gamma, omega, run.cell_integrals[:, b].reshape(grid.shape), grid,
                               f_boundary=run.segment_integrals[:, b])
        rhs = sum(a["C_g"] * (a["prism"] / a["h_p"] + a["normal_variation"]) for a in pr.arcs)
        consts[b] = rhs / pr.omega_integral
        chains[b] = pr.chain_ok
        bnd = run.boundary[b] / run.denom[b]
        bridges[b] = pr.chain_ok and bnd <= consts[b] * interior[b] * (1 + 1e-12)
    return BoundaryObservabilityReport(rep, interior[keep], consts[keep], chains[keep], bridges[keep])


@dataclass
class UniqueContinuationReport:
    ratios: np.ndarray
    floor: float
    near_vanishing: np.ndarray
    global_norm_T: np.ndarray
    zero_data: list
    consistent: bool


def unique_continuation_probe(grid: Grid, omega: ControlRegion, T: float, data, potentials: PotentialPair | None = None,
                              delta: float = 1e-6, run: ObservationRun | None = None, **kw) -> UniqueContinuationReport:
    """Ratio of omega-trace energy to global energy over [0, T] for every datum.

    A datum is flagged near-vanishing when sup over omega x [0, T] of
    |w| + |w_t| is below delta times the global sup.  Zero data are consistent
    by definition; the probe is consistent when every nonzero datum has a
    positive ratio and no nonzero datum is flagged.
    """
    run = run or observe(grid, omega, T, data, potentials, **kw)
    zero = run.global_energy == 0
    r = np.where(zero, 0.0, run.omega_energy / np.where(zero, 1.0, run.global_energy))
    flag = (~zero) & (run.omega_sup < delta * run.global_sup)
    nz = r[~zero]
    floor = float(nz.min()) if nz.size else 0.0
    N_T = run.denom  # includes the endpoint norms
    return UniqueContinuationReport(r, floor, flag, N_T, [int(i) for i in np.nonzero(zero)[0]],
                                    bool((nz > 0).all() and not flag.any()))


# ---------------------------------------------------------------------------
# gradient structure


def _residual(op: WaveOperator, u: np.ndarray, nl: Nonlinearity) -> np.ndarray:
    """-L u + f(u) on active cells."""
    return (-(op.L @ u) + nl.f(u)) * op.active.reshape((-1,) + (1,) * (u.ndim - 1))


@dataclass
class LyapunovReport:
    monotone: bool
    max_increase: float
    total_decrease: float
    status: str
    omega_velocity: float | None
    stationary_residual: float | None

    @property
    def passed(self) -> bool:
        return self.monotone and self.status != "not stationary"


def lyapunov_check(traj, damping: DampingCoefficient, nl: Nonlinearity, tol: float = 1e-8,
                   op: WaveOperator | None = None) -> LyapunovReport:
    """Check that the total energy never increases and classify the run.

    An increase is tolerated only up to the step's energy-identity residual
    plus 1e-13 of the initial energy.  When the total decrease is below
    tol * (1 + |E(0)|) the snapshots are audited for stationarity:
    |u_t|_{L2(omega)} < tol and |-Lap u + f(u)|_{L2} < tol.
    """
    tr = traj.trace
    E = np.atleast_2d(tr.totalE.T).T
    res = np.abs(np.atleast_2d(tr.residual.T).T)
    inc = np.diff(E, axis=0)
    allow = res[1:] + 1e-13 * np.abs(E[0])
    monotone = bool((inc <= allow).all())
    max_inc = float(inc.max()) if inc.size else 0.0
    decrease = float((E[0] - E[-1]).max())
    if not np.any(damping.a > 0):
        return LyapunovReport(monotone, max_inc, decrease, "no damping, test inconclusive", None, None)
    if decrease > tol * (1 + float(np.abs(E[0]).max())):
        return LyapunovReport(monotone, max_inc, decrease, "strictly decreasing", None, None)
    op = op or WaveOperator(traj.grid)
    mask = damping.omega.cells.ravel() if damping.omega is not None else damping.a.ravel() > 0
    vel = max(float(np.sqrt((traj.v[k][mask] ** 2).sum(0).max() * op.h**2)) for k in range(traj.u.shape[0]))
    resid = max(float(np.sqrt(op.l2sq(_residual(op, traj.u[k], nl)).max())) for k in range(traj.u.shape[0]))
    status = "stationary" if vel < tol and resid < tol else "not stationary"
    return LyapunovReport(monotone, max_inc, decrease, status, vel, resid)


@dataclass
class Equilibrium:
    u: np.ndarray
    grad_norm2: float
    residual: float
    seed: int


@dataclass
class StationaryAudit:
    c_f: float
    bound: float
    equilibria: list
    skipped: list
    bound_ok: bool


def stationary_constant(nl: Nonlinearity, lam1: float, area: float, z_max: float = 100.0, n: int = 200001) -> float:
    """c_f = |M| max_z (-f(z) z - lam1 z^2 / 4), so that int f(u) u >= -(lam1/4)|u|^2 - c_f."""
    z = np.linspace(-z_max, z_max, n)
    return float(area * max(0.0, np.max(-nl.f(z) * z - 0.25 * lam1 * z * z)))


def solve_stationary(grid: Grid, nl: Nonlinearity, u_init: np.ndarray, tol: float = 1e-11, max_iter: int = 60,
                     op: WaveOperator | None = None):
    """Damped Newton for -L u + f(u) = 0 on the active cells; returns (u, residual) or raises on divergence."""
    op = op or WaveOperator(grid)
    act = op.active
    idx = np.nonzero(act)[0]
    L = op.L.tocsr()[idx][:, idx]
    u = np.asarray(u_init, float).ravel()[idx].copy()

    def res(x):
        return -(L @ x) + nl.f(x)

    def norm(r):
        return float(np.sqrt((r * r).sum() * op.h**2))

    absL = abs(L)

    def floor(x):
        # rounding level of the residual; L scales like 1/h^2 so a fixed tol is unreachable on fine grids
        return 64 * np.finfo(float).eps * norm(absL @ np.abs(x) + np.abs(nl.f(x)))

    r = res(u)
    for _ in range(max_iter):
        nr = norm(r)
        if nr < max(tol, floor(u)):
            out = np.zeros(op.N)
            out[idx] = u
            return out, nr
        J = (-L + sp.diags(nl.df(u))).tocsc()
        du = spla.spsolve(J, -r)
        s = 1.0
        while s > 1e-6:
            cand = u + s * du
            rc = res(cand)
            if norm(rc) < (1 - 1e-4 * s) * nr:
                break
            s *= 0.5
        else:
            raise RuntimeError("line search failed")
        u, r = cand, rc
        if not np.all(np.isfinite(u)):
            raise RuntimeError("diverged")
    raise RuntimeError(f"no convergence, residual {norm(r):.3e}")


def stationary_audit(nl: Nonlinearity, grid: Grid, n_seeds: int = 5, seed: int = 0, lam1: float | None = None,
                     op: WaveOperator | None = None) -> StationaryAudit:
    """Find discrete equilibria by damped Newton from several seeds and check |grad u|^2 <= 2 c_f.

    Seeds: zero, plus and minus a multiple of the first eigenvector, then
    random smooth fields.  Equilibria are deduplicated by their energy norm.
    """
    op = op or WaveOperator(grid)
    lam_d, phi = first_dirichlet_eigenvalue(grid, return_vector=True)
    lam1 = lam_d if lam1 is None else lam1
    audit = audit_nonlinearity(nl, lam1)
    if not audit.passed:
        raise ValueError(f"nonlinearity {nl.name} rejected: {', '.join(audit.failures())}")
    phi = np.asarray(phi, float).ravel()
    phi = phi / np.abs(phi).max()
    rng = np.random.default_rng(seed)
    X, Y = grid.centers()
    seeds = [np.zeros(op.N), 3 * phi, -3 * phi]
    while len(seeds) < n_seeds:
        m, n = rng.integers(1, 4, size=2)
        seeds.append(rng.uniform(1, 4) * (np.sin(m * np.pi * X) * np.sin(n * np.pi * Y)).ravel() * op.active)
    c_f = stationary_constant(nl, lam1, grid.domain.area)
    found, skipped = [], []
    for i, s0 in enumerate(seeds[:n_seeds]):
        try:
            u, r = solve_stationary(grid, nl, s0, op=op)
        except (RuntimeError, np.linalg.LinAlgError) as exc:
            skipped.append((i, str(exc)))
            continue
        g2 = float(op.grad_sq(u))
        if all(abs(g2 - e.grad_norm2) > 1e-6 * (1 + g2) or np.abs(u - e.u).max() > 1e-6 for e in found):
            found.append(Equilibrium(u, g2, r, i))
    ok = all(e.grad_norm2 <= 2 * c_f * (1 + 1e-12) + 1e-20 for e in found)
    return StationaryAudit(c_f, 2 * c_f, found, skipped, ok)


# ---------------------------------------------------------------------------
# pairs of trajectories


@dataclass
class PairRun:
    t: np.ndarray
    D2: np.ndarray  # |z1 - z2|^2 in the energy space, (n, P)
    L3sq: np.ndarray  # |u1 - u2|^2 in L^3
    E: np.ndarray
    grad2: np.ndarray
    vel2: np.ndarray
    w2: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    secant: np.ndarray  # -int (f(u1) - f(u2)) w, the p0 term
    damp: np.ndarray  # int a (g(u1_t) - g(u2_t)) w
    trace: object = field(repr=False)


def pair_data(grid: Grid, seed: int, pairs: int, norm: float = 1.0, spread: float = 0.5, op: WaveOperator | None = None):
    """Initial pairs: z1 random with energy norm `norm`, z2 = z1 + perturbation of norm `spread * norm`."""
    from .wave import random_data
    op = op or WaveOperator(grid)
    a0, a1 = random_data(grid, seed, pairs, norm=norm, op=op)
    p0, p1 = random_data(grid, seed + 7919, pairs, norm=spread * norm, op=op)
    return (a0, a1), (a0 + p0, a1 + p1)


def run_pairs(grid: Grid, z1, z2, damping: DampingCoefficient, nl: Nonlinearity, T: float, omega: ControlRegion | None = None,
              dt: float | None = None, cfl: float = 0.5, norm_cap: float | None = None, lam1: float | None = None,
              op: WaveOperator | None = None) -> PairRun:
    """Run both members of every pair in one batch and record difference diagnostics at each step."""
    op = op or WaveOperator(grid)
    P = np.asarray(z1[0]).reshape(op.N, -1).shape[1]
    u0 = np.concatenate([np.asarray(z1[0]).reshape(op.N, P), np.asarray(z2[0]).reshape(op.N, P)], 1)
    u1 = np.concatenate([np.asarray(z1[1]).reshape(op.N, P), np.asarray(z2[1]).reshape(op.N, P)], 1)
    if norm_cap is not None and np.any(np.sqrt(hnorm2(op, u0, u1)) > norm_cap * (1 + 1e-12)):
        raise ValueError("initial data outside the bounded set")
    om = (omega.cells if omega is not None else damping.a > 0).ravel()
    a = damping.a.ravel()[:, None]
    h2 = op.h**2
    rec = {k: [] for k in ("D2", "L3sq", "grad2", "vel2", "w2", "phi", "psi", "secant", "damp")}

    def mon(n, t, u, w):
        d = u[:, :P] - u[:, P:]
        dv = w[:, :P] - w[:, P:]
        g2 = op.grad_sq(d)
        v2 = op.l2sq(dv)
        rec["D2"].append(g2 + v2)
        rec["grad2"].append(g2)
        rec["vel2"].append(v2)
        rec["w2"].append(op.l2sq(d))
        rec["L3sq"].append(((np.abs(d) ** 3).sum(0) * h2) ** (2.0 / 3.0))
        rec["phi"].append((d * dv).sum(0) * h2)
        rec["psi"].append((d[om] * dv[om]).sum(0) * h2)
        rec["secant"].append(-((nl.f(u[:, :P]) - nl.f(u[:, P:])) * d).sum(0) * h2)
        rec["damp"].append((a * (nl.g(w[:, :P]) - nl.g(w[:, P:])) * d).sum(0) * h2)
        return 0.0

    traj = solve_semilinear(grid, u0, u1, damping, nl, T=T, dt=dt, cfl=cfl, lam1=lam1, monitors={"pair": mon}, op=op)
    arr = {k: np.array(v) for k, v in rec.items()}
    E = 0.5 * arr["D2"]
    return PairRun(traj.trace.t_int, arr["D2"], arr["L3sq"], E, arr["grad2"], arr["vel2"], arr["w2"], arr["phi"], arr["psi"],
                   arr["secant"], arr["damp"], traj.trace)


@dataclass
class PerturbedEnergyDiagnostics:
    mu: float
    eta: float
    beta1: float
    beta2: float
    E: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    Phi: np.ndarray
    lower_margin: float
    upper_margin: float
    sandwich_ok: bool
    C_fit: float
    C_finite: bool


def perturbed_energy_diagnostics(run: PairRun, mu: float, eta: float, lam1: float, a0: float, m1: float) -> PerturbedEnergyDiagnostics:
    """Phi = mu E + eta phi + psi with phi = int w w_t, psi = int_omega w w_t, E the energy of w = u1 - u2.

    Asserts beta1 E <= Phi <= beta2 E with beta1,2 = mu -+ 2/sqrt(lam1), and fits
    the smallest C with d phi/dt <= -E - |grad w|^2/2 + 2|w_t|^2 + C |w|_{L3}^2 + int p0 w^2.
    """
    need = max(2.0 / (a0 * m1), 2.0 / np.sqrt(lam1))
    if not mu > need:
        which = "2/(a0 m1)" if 2.0 / (a0 * m1) >= 2.0 / np.sqrt(lam1) else "2/sqrt(lambda_1)"
        raise ValueError(f"mu={mu:g} must exceed {which}={need:g}")
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    b1 = mu - 2.0 / np.sqrt(lam1)
    b2 = mu + 2.0 / np.sqrt(lam1)
    E, phi, psi = run.E, run.phi, run.psi
    Phi = mu * E + eta * phi + psi
    lo = Phi - b1 * E
    hi = b2 * E - Phi
    ok = bool((lo >= 0).all() and (hi >= 0).all())
    dphi = np.gradient(phi, run.t, axis=0)
    rhs0 = -E - 0.5 * run.grad2 + 2 * run.vel2 + run.secant
    with np.errstate(divide="ignore", invalid="ignore"):
        need_C = np.where(run.L3sq > 0, (dphi - rhs0) / run.L3sq, np.where(dphi - rhs0 > 0, np.inf, 0.0))
    C = max(0.0, float(np.max(need_C))) if need_C.size else 0.0
    return PerturbedEnergyDiagnostics(mu, eta, float(b1), float(b2), E, phi, psi, Phi, float(lo.min()), float(hi.min()), ok,
                                      C, bool(np.isfinite(C)))


@dataclass
class QuasiStabilityReport:
    zetas: np.ndarray
    C_B: np.ndarray
    zeta_hat: float
    C_B_hat: float
    margin: float
    zeta_contraction: float
    pairs: int
    times: int
    cap: float
    degenerate: bool

    @property
    def passed(self) -> bool:
        return self.degenerate or (np.isfinite(self.C_B_hat) and self.zeta_hat > 0 and self.margin >= 0)

    def summary(self) -> dict:
        return {"zeta_hat": self.zeta_hat, "C_B_hat": self.C_B_hat, "margin": self.margin,
                "zeta_contraction": self.zeta_contraction, "pairs": self.pairs,
                "times": self.times, "passed": bool(self.passed)}


def quasi_stability_fit(t: np.ndarray, D2: np.ndarray, L3sq: np.ndarray, zetas: np.ndarray | None = None,
                        cap: float = 1e8) -> QuasiStabilityReport:
    """Fit D2(t) <= exp(-zeta t) D2(0) + C_B sup_{s<=t} L3sq(s) over all times and pairs.

    For each zeta the minimal C_B is the largest ratio of the excess over the
    running sup; the reported pair is the largest zeta whose C_B is at most
    ``cap``.  C_B is inflated by 1e-12 so rounding cannot flip the margin.
    Because the running sup includes s = 0, C_B stays finite for every zeta
    once the difference is nonzero; ``zeta_contraction`` (largest zeta with
    C_B = 0) is the pure contraction exponent.
    """
    zetas = np.logspace(-4, 1, 64) if zetas is None else np.asarray(zetas, float)
    D2 = np.atleast_2d(np.asarray(D2, float).T).T
    L3 = np.atleast_2d(np.asarray(L3sq, float).T).T
    t = np.asarray(t, float)
    S = np.maximum.accumulate(L3, axis=0)
    if np.all(D2[0] == 0) and np.all(D2 == 0):
        return QuasiStabilityReport(zetas, np.zeros_like(zetas), float(zetas[-1]), 0.0, 0.0, float(zetas[-1]), D2.shape[1], len(t),
                                    cap, True)
    CB = np.empty_like(zetas)
    for i, z in enumerate(zetas):
        excess = D2 - np.exp(-z * t)[:, None] * D2[0]
        pos = excess > 0
        if np.any(pos & (S <= 0)):
            CB[i] = np.inf
            continue
        CB[i] = float(np.max(np.where(pos, excess / np.where(S > 0, S, 1.0), 0.0))) * (1 + 1e-12)
    free = np.nonzero(CB == 0)[0]
    z0 = float(zetas[free[-1]]) if free.size else 0.0
    ok = np.nonzero(CB <= cap)[0]
    if ok.size == 0:
        return QuasiStabilityReport(zetas, CB, 0.0, np.inf, -np.inf, z0, D2.shape[1], len(t), cap, False)
    i = int(ok[-1])
    z, c = float(zetas[i]), float(CB[i])
    margin = float(np.min(np.exp(-z * t)[:, None] * D2[0] + c * S - D2))
    return QuasiStabilityReport(zetas, CB, z, c, margin, z0, D2.shape[1], len(t), cap, False)


@dataclass
class WindowContraction:
    gammas: np.ndarray
    zeta: float
    spread: float
    agree: bool


def window_contractions(t: np.ndarray, D2: np.ndarray, T_w: float, windows: int = 3, rtol: float = 0.1) -> WindowContraction:
    """Per-window contraction gamma_k = max over pairs of D2(end)/D2(start) for [kT, (k+1)T].

    The composition check requires the window factors to agree within rtol
    (relative to their mean), and zeta = -mean(log gamma) / T_w.
    """
    D2 = np.atleast_2d(np.asarray(D2, float).T).T
    idx = [int(np.argmin(np.abs(t - k * T_w))) for k in range(windows + 1)]
    if idx[-1] == idx[-2] or abs(t[idx[-1]] - windows * T_w) > 2 * (t[1] - t[0]):
        raise ValueError("the run does not cover all windows")
    g = np.array([float(np.max(D2[b] / D2[a])) for a, b in zip(idx[:-1], idx[1:])])
    lengths = np.diff(t[idx])
    spread = float((g.max() - g.min()) / g.mean())
    return WindowContraction(g, float(-np.mean(np.log(g) / lengths)), spread, bool(spread <= rtol and (g < 1).all()))


@dataclass
class DecayFit:
    rate: float
    residual: float
    window: tuple
    points: int


def decay_fit(t: np.ndarray, E: np.ndarray, window: tuple | None = None) -> DecayFit:
    """Least-squares line through log E on the window; rate = -slope, residual = RMS of log misfit.

    Points below 1e-14 E(0) are dropped (underflow truncation).
    """
    t = np.asarray(t, float)
    E = np.asarray(E, float)
    lo, hi = window if window is not None else (t[0], t[-1])
    sel = (t >= lo - 1e-12) & (t <= hi + 1e-12) & (E > 1e-14 * E[0])
    if sel.sum() < 2:
        raise ValueError("fewer than two positive samples in the window")
    tt, y = t[sel], np.log(E[sel])
    A = np.stack([tt, np.ones_like(tt)], 1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    return DecayFit(float(-coef[0]), float(np.sqrt(np.mean(res**2))), (float(tt[0]), float(tt[-1])), int(sel.sum()))
