"""Finite-difference damped wave solvers with a discrete energy identity.

Time stepping is leapfrog with the damping term centred: at step n the
centred velocity w solves w + (dt/2) D(w) = v^{n-1/2} + (dt/2)(L u^n + s(u^n)),
then v^{n+1/2} = 2w - v^{n-1/2} and u^{n+1} = u^n + dt v^{n+1/2}.  With the
staggered energy
    E_{n+1/2} = |v^{n+1/2}|^2/2 + <grad u^{n+1}, grad u^n>/2 + (int F(u^{n+1}) + int F(u^n))/2
the identity E_{n+1/2} - E_{n-1/2} = -dt int D(w) w holds exactly when F = 0,
and up to a third-order remainder in the increments otherwise.

Fields are flattened cell vectors of length nx*ny; ensembles are columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import Grid, face_operator, first_dirichlet_eigenvalue
from .regions import ControlRegion


class CFLViolation(ValueError):
    pass


class NumericalAbort(RuntimeError):
    """Non-finite field or failed inner solve; carries the step index."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class HypothesisViolation(ValueError):
    pass


MAX_CFL = 1.0 / np.sqrt(2.0)


class WaveOperator:
    """Discrete div(c^2 grad) with Dirichlet data plus the matching norms."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.fo = face_operator(grid)
        self.L = self.fo.laplacian
        self.active = grid.inside.ravel()
        self.h = grid.h
        self.c_max = grid.domain.speed.c_max
        self.N = grid.nx * grid.ny
        self._normal = _normal_stencil(grid)
        self._cache = None

    def l2sq(self, v: np.ndarray) -> np.ndarray:
        return _wsum(None, v, v) * self.h**2

    def face_diff(self, u: np.ndarray) -> np.ndarray:
        """D u, cached for the most recent array object (solver states are never mutated)."""
        if self._cache is not None and self._cache[0] is u:
            return self._cache[1]
        du = self.fo.D @ u
        self._cache = (u, du)
        return du

    def _w(self, du):
        return self.fo.weight if du.ndim == 1 else self.fo.weight[:, None]

    def face_density(self, u: np.ndarray) -> np.ndarray:
        """Per-face c^2 |difference|^2 / h^2; its sum times h^2 is |grad u|^2."""
        du = self.face_diff(u)
        return self._w(du) * du * du / self.h**2

    def grad_sq(self, u: np.ndarray) -> np.ndarray:
        du = self.face_diff(u)
        return _wsum(self.fo.weight, du, du)

    def grad_inner(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        du, dv = self.face_diff(u), self.fo.D @ v
        return _wsum(self.fo.weight, du, dv)

    def grad_inner_pair(self, u_new: np.ndarray, u: np.ndarray) -> np.ndarray:
        """<grad u_new, grad u>, caching D u_new for the next step."""
        du = self.face_diff(u)
        dn = self.fo.D @ u_new
        val = _wsum(self.fo.weight, du, dn)
        self._cache = (u_new, dn)
        return val

    def grad_density(self, u: np.ndarray) -> np.ndarray:
        """Cellwise |grad u|^2; summing times h^2 gives |grad u|^2."""
        return self.fo.owner @ self.face_density(u)

    def face_share(self, cells: np.ndarray) -> np.ndarray:
        """Per-face weight s with sum_faces s * face_density * h^2 = int over the cells of |grad u|^2."""
        return self.fo.owner.T @ np.asarray(cells, dtype=float).ravel()

    def normal_derivative(self, u: np.ndarray) -> np.ndarray:
        """Outward normal derivative at each boundary segment.

        Uses (9 u1 - u2) / (3h) for the inward derivative with u = 0 on the
        wall, where u1, u2 sit h/2 and 3h/2 inside; falls back to 2 u1 / h when
        the second cell is unavailable.
        """
        i1, i2, has2 = self._normal
        u1 = u[i1]
        u2 = np.where(has2.reshape((-1,) + (1,) * (u.ndim - 1)), u[i2], 0.0)
        second = (9 * u1 - u2) / (3 * self.h)
        first = 2 * u1 / self.h
        inward = np.where(has2.reshape((-1,) + (1,) * (u.ndim - 1)), second, first)
        return -inward


def _wsum(w, a, b):
    """sum_i w_i a_i b_i over the first axis (w = None means unit weights)."""
    if a.ndim == 1:
        return float(np.dot(a * w, b)) if w is not None else float(np.dot(a, b))
    if w is None:
        return np.einsum("ij,ij->j", a, b)
    return np.einsum("i,ij,ij->j", w, a, b)


def _normal_stencil(grid: Grid):
    seg = grid.segments
    i1 = seg.cell[:, 0] * grid.ny + seg.cell[:, 1]
    step = -np.round(seg.normal).astype(int)
    axis_aligned = np.abs(np.abs(seg.normal).max(1) - 1) < 1e-12
    c2 = seg.cell + step
    ok = axis_aligned & (c2[:, 0] >= 0) & (c2[:, 0] < grid.nx) & (c2[:, 1] >= 0) & (c2[:, 1] < grid.ny)
    c2 = np.where(ok[:, None], c2, seg.cell)
    has2 = ok & grid.inside[c2[:, 0], c2[:, 1]]
    # a wall-aligned segment has its cell centre exactly h/2 from the boundary only on the box
    x0, x1, y0, y1 = grid.domain.bbox
    mid = seg.midpoint
    on_box = (np.abs(mid[:, 0] - x0) < 1e-12) | (np.abs(mid[:, 0] - x1) < 1e-12) | (np.abs(mid[:, 1] - y0) < 1e-12) | (np.abs(mid[:, 1] - y1) < 1e-12)
    has2 &= on_box
    i2 = c2[:, 0] * grid.ny + c2[:, 1]
    return i1, i2, has2


# ---------------------------------------------------------------------------
# model ingredients


@dataclass(frozen=True)
class Nonlinearity:
    """Source f with antiderivative F, and damping function g."""

    f: Callable
    df: Callable
    F: Callable
    g: Callable
    dg: Callable
    C_f: float
    m1: float
    m2: float
    name: str = "custom"
    g_slope: float | None = None  # set when g is linear, g(s) = slope * s

    @staticmethod
    def cubic(kappa: float = 0.0, g_slope: float = 1.0) -> "Nonlinearity":
        """f(u) = u^3 - kappa u, g(s) = g_slope * s."""
        k = float(kappa)
        return Nonlinearity(
            f=lambda u: u * (u * u - k),
            df=lambda u: 3 * u * u - k,
            F=lambda u: (u * u) * (0.25 * u * u - 0.5 * k),
            g=lambda s: g_slope * s,
            dg=lambda s: np.full_like(np.asarray(s, dtype=float), g_slope),
            C_f=max(3.0, abs(k)),
            m1=g_slope, m2=g_slope,
            name=f"cubic(kappa={k:g})", g_slope=g_slope,
        )

    @staticmethod
    def zero(g_slope: float = 1.0) -> "Nonlinearity":
        return Nonlinearity(
            f=lambda u: np.zeros_like(u), df=lambda u: np.zeros_like(u), F=lambda u: np.zeros_like(u),
            g=lambda s: g_slope * s, dg=lambda s: np.full_like(np.asarray(s, dtype=float), g_slope),
            C_f=0.0, m1=g_slope, m2=g_slope, name="zero", g_slope=g_slope,
        )

    @staticmethod
    def linear(k: float, g_slope: float = 1.0) -> "Nonlinearity":
        """f(u) = k u (audit fails (f2) when k < -lambda_1)."""
        return Nonlinearity(
            f=lambda u: k * u, df=lambda u: np.full_like(u, k), F=lambda u: 0.5 * k * u**2,
            g=lambda s: g_slope * s, dg=lambda s: np.full_like(np.asarray(s, dtype=float), g_slope),
            C_f=abs(k), m1=g_slope, m2=g_slope, name=f"linear({k:g})", g_slope=g_slope,
        )

    def with_arctan_damping(self, beta: float = 0.5) -> "Nonlinearity":
        """g(s) = s + beta arctan(s): monotone, nonlinear, 1 <= g' <= 1 + beta."""
        return Nonlinearity(
            self.f, self.df, self.F,
            g=lambda s: s + beta * np.arctan(s), dg=lambda s: 1.0 + beta / (1.0 + s * s),
            C_f=self.C_f, m1=1.0, m2=1.0 + beta, name=self.name + f"+arctan({beta:g})", g_slope=None,
        )


@dataclass
class NonlinearityAudit:
    f0_ok: bool
    f1_ok: bool
    f2_ok: bool
    f2_margin: float
    g0_ok: bool
    g_ok: bool
    z_large: float

    @property
    def passed(self) -> bool:
        return self.f0_ok and self.f1_ok and self.f2_ok and self.g0_ok and self.g_ok

    def failures(self) -> list[str]:
        names = {"f0_ok": "f(0) = 0", "f1_ok": "growth |f'| <= C_f (1 + z^2)", "f2_ok": "liminf f(z)/z > -lambda_1",
                 "g0_ok": "g(0) = 0", "g_ok": "m1 <= g' <= m2 with m1 > 0"}
        return [v for k, v in names.items() if not getattr(self, k)]


def audit_nonlinearity(nl: Nonlinearity, lam1: float, z_large: float = 10.0, n: int = 4001) -> NonlinearityAudit:
    """Check the growth, dissipativity and damping hypotheses on a lattice over [-2 z_large, 2 z_large]."""
    if z_large < 10:
        raise ValueError("z_large must be at least 10")
    z = np.linspace(-2 * z_large, 2 * z_large, n)
    f0 = abs(float(nl.f(np.array([0.0]))[0])) == 0.0
    f1 = bool(np.all(np.abs(nl.df(z)) <= nl.C_f * (1 + z**2) * (1 + 1e-12)))
    tail = np.abs(z) >= z_large
    margin = float((nl.f(z[tail]) / z[tail]).min() + lam1)
    g0 = abs(float(nl.g(np.array([0.0]))[0])) == 0.0
    dg = nl.dg(z)
    gok = bool(nl.m1 > 0 and np.all(dg >= nl.m1 * (1 - 1e-12)) and np.all(dg <= nl.m2 * (1 + 1e-12)))
    return NonlinearityAudit(f0, f1, margin > 0, margin, g0, gok, z_large)


@dataclass(eq=False)
class DampingCoefficient:
    a: np.ndarray
    a0: float
    omega: ControlRegion | None = None

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        if np.any(self.a < 0):
            raise ValueError("damping coefficient must be nonnegative")
        if self.omega is not None and np.any(self.a[self.omega.cells] < self.a0 * (1 - 1e-15)):
            raise ValueError("damping coefficient below a0 somewhere on omega")

    @staticmethod
    def on_region(region: ControlRegion, a0: float, background: float = 0.0) -> "DampingCoefficient":
        a = np.where(region.cells, a0, background).astype(float)
        return DampingCoefficient(a, a0, region)

    @staticmethod
    def uniform(grid: Grid, a0: float) -> "DampingCoefficient":
        return DampingCoefficient(np.full(grid.shape, float(a0)), float(a0), None)

    @staticmethod
    def none(grid: Grid) -> "DampingCoefficient":
        return DampingCoefficient(np.zeros(grid.shape), 0.0, None)


@dataclass
class PotentialPair:
    """Coefficients of w_tt - Lap w = p0 w + p1 w_t; each is None, a field, or a callable t -> field."""

    p0: object = None
    p1: object = None
    C_T: float | None = None
    p1_sup: float | None = None

    def field(self, which: str, grid: Grid, t: float):
        p = getattr(self, which)
        if p is None:
            return None
        val = p(t) if callable(p) else p
        return np.broadcast_to(np.asarray(val, dtype=float), grid.shape).ravel()

    def audit_p1(self, grid: Grid, times) -> bool:
        if self.p1 is None:
            return True
        sup = max(float(np.abs(self.field("p1", grid, t)).max()) for t in times)
        return self.p1_sup is None or sup <= self.p1_sup * (1 + 1e-12)


# ---------------------------------------------------------------------------
# states and traces


@dataclass
class WaveField:
    u: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise NumericalAbort("non-finite field", -1)


@dataclass
class EnergyTrace:
    """Energies at half steps (k -> t_{k-1/2}) and integer-step diagnostics.

    E, totalE, residual live at half steps; dissipation[k] is int D(w) w at
    the integer step between half steps k-1 and k.  E_int, totalE_int and
    norm2 are evaluated at integer steps with the centred velocity.
    """

    dt: float
    t_half: np.ndarray
    E: np.ndarray
    totalE: np.ndarray
    dissipation: np.ndarray
    residual: np.ndarray
    t_int: np.ndarray
    E_int: np.ndarray
    totalE_int: np.ndarray
    norm2: np.ndarray

    def column(self, b: int) -> "EnergyTrace":
        def pick(a):
            return a[:, b] if a.ndim == 2 else a
        return EnergyTrace(self.dt, self.t_half, pick(self.E), pick(self.totalE), pick(self.dissipation), pick(self.residual),
                           self.t_int, pick(self.E_int), pick(self.totalE_int), pick(self.norm2))

    def rows(self, every: int = 1):
        """(t, E, totalE, dissipation, residual) at every ``every``-th half step.

        The residual column sums the per-step residuals since the previous row.
        """
        idx = np.arange(0, len(self.t_half), every)
        cum = np.cumsum(self.residual, axis=0)
        res = np.diff(np.concatenate([np.zeros((1,) + cum.shape[1:]), cum[idx]], axis=0), axis=0)
        return self.t_half[idx], self.E[idx], self.totalE[idx], self.dissipation[idx], res

    def max_residual_rate(self) -> float:
        """Largest |residual| per unit time, relative to |totalE(0)|, over unit windows."""
        r = np.abs(self.residual[1:])
        if r.ndim == 2:
            r = r.max(1)
        steps = max(1, int(round(1.0 / self.dt)))
        win = np.convolve(r, np.ones(steps), mode="valid") if len(r) >= steps else np.array([r.sum()])
        E0 = np.abs(self.totalE[0]).max() if np.ndim(self.totalE[0]) else abs(self.totalE[0])
        return float(win.max() / max(E0, 1e-300))


@dataclass
class Trajectory:
    grid: Grid = field(repr=False)
    dt: float
    steps: int
    snap_times: np.ndarray
    u: np.ndarray = field(repr=False)  # (n_snap, N, B)
    v: np.ndarray = field(repr=False)
    trace: EnergyTrace = field(repr=False)
    diagnostics: dict = field(default_factory=dict, repr=False)

    def field(self, k: int, b: int = 0) -> WaveField:
        shape = self.grid.shape
        return WaveField(self.u[k, :, b].reshape(shape), self.v[k, :, b].reshape(shape), float(self.snap_times[k]))

    @property
    def final(self) -> WaveField:
        return self.field(len(self.snap_times) - 1)


def time_step(grid: Grid, T: float, dt: float | None = None, cfl: float = 0.5) -> tuple[float, int]:
    """Step size and count: dt = T / ceil(T / (cfl h / c_max)) unless dt is given."""
    if cfl <= 0 or cfl > MAX_CFL:
        raise CFLViolation(f"CFL number {cfl} outside (0, 1/sqrt(2)]")
    c_max = grid.domain.speed.c_max
    limit = cfl * grid.h / c_max
    if dt is None:
        n = max(1, int(np.ceil(T / limit - 1e-12)))
        return T / n, n
    if dt > limit * (1 + 1e-12):
        raise CFLViolation(f"dt={dt:g} exceeds the stability bound cfl*h/c_max={limit:g}")
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(T, 1):
        raise ValueError(f"T={T:g} is not a multiple of dt={dt:g}")
    return dt, n


def _columns(a, N):
    a = np.asarray(a, dtype=float)
    if a.ndim == 2 and a.shape[0] == N:
        return a
    if a.ndim == 2:
        return a.reshape(N, 1)
    if a.ndim == 3:
        return a.reshape(N, a.shape[2])
    if a.ndim == 1 and a.size == N:
        return a.reshape(N, 1)
    raise ValueError(f"field of shape {a.shape} does not match {N} cells")


def _simulate(*args, **kw):
    # overflow turns into a NumericalAbort below, so the float warnings are noise
    with np.errstate(over="ignore", invalid="ignore"):
        return _simulate_steps(*args, **kw)


def _simulate_steps(op: WaveOperator, u0, v0, T, dt, n_steps, source, damp_solve, damp_term, F, monitors, snap_every, t0=0.0,
                    check_every=16):
    N = op.N
    u = _columns(u0, N) * op.active[:, None]
    v = _columns(v0, N) * op.active[:, None]
    B = u.shape[1]
    h2 = op.h**2
    L = op.L

    def accel(uu, t):
        a = L @ uu
        if source is not None:
            a = a + source(uu, t)
        return a

    def potential(uu):
        return np.zeros(uu.shape[1]) if F is None else F(uu).sum(0) * h2

    d0 = damp_term(v, t0)
    vh = v - 0.5 * dt * (accel(u, t0) if d0 is None else accel(u, t0) - d0)
    u_prev = u - dt * vh
    Fu = potential(u)
    E_half = [0.5 * op.l2sq(vh) + 0.5 * op.grad_inner_pair(u_prev, u)]
    tot_half = [E_half[0] + 0.5 * (potential(u_prev) + Fu)]
    diss = [np.zeros(B)]
    E_int, tot_int, norm2 = [], [], []
    snaps_u, snaps_v, snap_t = [], [], []
    diag = {name: [] for name in monitors}
    for n in range(n_steps + 1):
        t = t0 + n * dt
        r = accel(u, t)
        w = damp_solve(vh + 0.5 * dt * r, t, n)
        g2 = op.grad_sq(u)
        k2 = op.l2sq(w)
        E_int.append(0.5 * (g2 + k2))
        tot_int.append(E_int[-1] + Fu)
        norm2.append(g2 + k2)
        for name, fn in monitors.items():
            diag[name].append(fn(n, t, u, w))
        if (snap_every and n % snap_every == 0) or n == n_steps:
            snaps_u.append(u.copy())
            snaps_v.append(w.copy())
            snap_t.append(t)
        if n == n_steps:
            break
        dw = damp_term(w, t)
        D = np.zeros(B) if dw is None else np.einsum("ij,ij->j", dw, w) * h2
        vh = 2 * w - vh
        u_new = u + dt * vh
        Fn = potential(u_new)
        E_half.append(0.5 * op.l2sq(vh) + 0.5 * op.grad_inner_pair(u_new, u))
        tot_half.append(E_half[-1] + 0.5 * (Fn + Fu))
        diss.append(D)
        u, Fu = u_new, Fn
        if n % check_every == 0 and not np.all(np.isfinite(u)):
            raise NumericalAbort("non-finite field", n + 1)
    if not np.all(np.isfinite(u)):
        raise NumericalAbort("non-finite field", n_steps)
    E_half = np.array(E_half)
    tot_half = np.array(tot_half)
    diss = np.array(diss)
    resid = np.zeros_like(tot_half)
    resid[1:] = tot_half[1:] - tot_half[:-1] + dt * diss[1:]
    t_half = t0 + (np.arange(len(E_half)) - 0.5) * dt
    t_int = t0 + np.arange(n_steps + 1) * dt
    trace = EnergyTrace(dt, t_half, _sq(E_half), _sq(tot_half), _sq(diss), _sq(resid), t_int, _sq(np.array(E_int)),
                        _sq(np.array(tot_int)), _sq(np.array(norm2)))
    diagnostics = {k: np.array(vals) for k, vals in diag.items()}
    if snaps_u:
        U, V = np.array(snaps_u), np.array(snaps_v)
    else:
        U = V = np.zeros((0, N, B))
    return trace, diagnostics, np.array(snap_t), U, V


def _sq(a):
    return a[:, 0] if a.ndim == 2 and a.shape[1] == 1 else a


def solve_linear(grid: Grid, w0, w1, potentials: PotentialPair | None = None, T: float = 1.0, dt: float | None = None,
                 cfl: float = 0.5, monitors: dict | None = None, snap_every: int | None = None,
                 op: WaveOperator | None = None) -> Trajectory:
    """Integrate w_tt - div(c^2 grad w) = p0 w + p1 w_t with zero Dirichlet data.

    The speed field comes from the grid's domain.
    """
    potentials = potentials or PotentialPair()
    op = op or WaveOperator(grid)
    dt, n = time_step(grid, T, dt, cfl)

    def source(u, t):
        p0 = potentials.field("p0", grid, t)
        return None if p0 is None else p0[:, None] * u

    def damp_term(w, t):
        p1 = potentials.field("p1", grid, t)
        return None if p1 is None else -p1[:, None] * w

    def damp_solve(rhs, t, step):
        p1 = potentials.field("p1", grid, t)
        if p1 is None:
            return rhs
        denom = 1.0 - 0.5 * dt * p1
        if np.any(denom <= 0):
            raise NumericalAbort("time step too large for the antidamping coefficient", step)
        return rhs / denom[:, None]

    src = source if potentials.p0 is not None else None
    trace, diag, ts, U, V = _simulate(op, w0, w1, T, dt, n, src, damp_solve, damp_term, None, monitors or {}, snap_every)
    return Trajectory(grid, dt, n, ts, U, V, trace, diag)


def solve_semilinear(grid: Grid, u0, u1, damping: DampingCoefficient, nl: Nonlinearity, T: float = 1.0,
                     dt: float | None = None, cfl: float = 0.5, lam1: float | None = None, monitors: dict | None = None,
                     snap_every: int | None = None, op: WaveOperator | None = None, audit: bool = True) -> Trajectory:
    """Integrate u_tt - div(c^2 grad u) + a g(u_t) + f(u) = 0 with zero Dirichlet data."""
    if audit:
        lam1 = lam1 if lam1 is not None else first_dirichlet_eigenvalue(grid)
        rep = audit_nonlinearity(nl, lam1)
        if not rep.passed:
            raise HypothesisViolation(f"nonlinearity {nl.name} rejected: {', '.join(rep.failures())}")
    op = op or WaveOperator(grid)
    dt, n = time_step(grid, T, dt, cfl)
    a = np.asarray(damping.a, dtype=float).ravel()[:, None]

    def source(u, t):
        return -nl.f(u)

    def damp_term(w, t):
        return a * nl.g(w)

    def damp_solve(rhs, t, step):
        if nl.g_slope is not None:
            return rhs / (1.0 + 0.5 * dt * a * nl.g_slope)
        w = rhs / (1.0 + 0.5 * dt * a * nl.dg(rhs))
        for _ in range(8):
            res = w + 0.5 * dt * a * nl.g(w) - rhs
            dw = res / (1.0 + 0.5 * dt * a * nl.dg(w))
            w = w - dw
            if np.all(np.abs(dw) <= 1e-14 * (1.0 + np.abs(w))):
                return w
        raise NumericalAbort("damping Newton solve did not converge in 8 iterations", step)

    zero_f = nl.name == "zero"
    trace, diag, ts, U, V = _simulate(op, u0, u1, T, dt, n, None if zero_f else source, damp_solve, damp_term,
                                      None if zero_f else nl.F, monitors or {}, snap_every)
    return Trajectory(grid, dt, n, ts, U, V, trace, diag)


def energy(field_: WaveField, nl: Nonlinearity | None = None, op: WaveOperator | None = None, grid: Grid | None = None):
    """(E, total energy) with E = (|v|^2 + |grad u|^2)/2 and total = E + int F(u)."""
    if op is None:
        if grid is None:
            raise ValueError("pass a grid or an operator")
        op = WaveOperator(grid)
    u = np.asarray(field_.u, dtype=float).ravel()
    v = np.asarray(field_.v, dtype=float).ravel()
    E = 0.5 * (float(op.l2sq(v)) + float(op.grad_sq(u)))
    tot = E + (float(nl.F(u).sum() * op.h**2) if nl is not None else 0.0)
    return E, tot


# ---------------------------------------------------------------------------
# initial data


def sine_modes(grid: Grid, modes) -> np.ndarray:
    """Dirichlet sine modes sin(m pi x / Lx) sin(n pi y / Ly) on the bounding box, shape (nx, ny, K)."""
    x0, x1, y0, y1 = grid.domain.bbox
    X, Y = grid.centers()
    out = np.stack([np.sin(m * np.pi * (X - x0) / (x1 - x0)) * np.sin(n * np.pi * (Y - y0) / (y1 - y0)) for m, n in modes], -1)
    return out * grid.inside[:, :, None]


def hnorm2(op: WaveOperator, u, v) -> np.ndarray:
    """Discrete |grad u|^2 + |v|^2 per column."""
    U = _columns(u, op.N)
    V = _columns(v, op.N)
    return op.grad_sq(U) + op.l2sq(V)


def random_data(grid: Grid, seed: int, count: int = 1, n_modes: int = 16, norm: float = 1.0, op: WaveOperator | None = None):
    """Truncated sine expansions with N(0,1) coefficients, scaled to a fixed energy norm.

    Returns (u0, u1) with shape (nx, ny, count).  The first n_modes modes in
    order of increasing m^2 + n^2 are used.
    """
    op = op or WaveOperator(grid)
    side = int(np.ceil(np.sqrt(n_modes))) + 2
    cand = sorted(((m, n) for m in range(1, side + 1) for n in range(1, side + 1)), key=lambda p: (p[0] ** 2 + p[1] ** 2, p))
    modes = cand[:n_modes]
    S = sine_modes(grid, modes).reshape(-1, n_modes)
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n_modes, count))
    b = rng.standard_normal((n_modes, count))
    freq = np.array([np.hypot(m, n) * np.pi for m, n in modes])
    u0 = S @ a
    u1 = S @ (b * freq[:, None])
    s = norm / np.sqrt(hnorm2(op, u0, u1))
    return (u0 * s).reshape(grid.nx, grid.ny, count), (u1 * s).reshape(grid.nx, grid.ny, count)


def gaussian_beam(grid: Grid, width: float, n_y: int, x0: float = 0.5, norm: float = 1.0, op: WaveOperator | None = None):
    """Standing beam exp(-(x-x0)^2 / (2 width^2)) sin(n_y pi y), at rest, scaled to a fixed energy norm."""
    op = op or WaveOperator(grid)
    X, Y = grid.centers()
    _, _, y0, y1 = grid.domain.bbox
    u0 = np.exp(-((X - x0) ** 2) / (2 * width**2)) * np.sin(n_y * np.pi * (Y - y0) / (y1 - y0)) * grid.inside
    u1 = np.zeros_like(u0)
    s = norm / np.sqrt(hnorm2(op, u0, u1)[0])
    return (u0 * s)[:, :, None], u1[:, :, None]


# ---------------------------------------------------------------------------
# a priori bounds


def sign_margin(nl: Nonlinearity, lam1: float, z_max: float = 100.0, n: int = 20001) -> float:
    """delta with F(z) >= -(lam1 - delta) z^2 / 2 on a lattice (C = 0), or -inf if none is positive.

    This is the quadratic lower bound on F that yields beta = delta / (2 lam1).
    """
    z = np.linspace(-z_max, z_max, n)
    z = z[z != 0]
    worst = float(np.max(-2.0 * nl.F(z) / z**2))
    delta = lam1 - max(worst, 0.0)
    return min(delta, lam1) if delta > 0 else -np.inf


@dataclass
class EnergyBoundsReport:
    beta: float
    C1: float
    C2: float
    C0: float
    beta_construction: float | None
    lower_ok: bool
    upper_ok: bool
    compE_ok: bool
    first_violation: int | None

    @property
    def passed(self) -> bool:
        return self.lower_ok and self.upper_ok and self.compE_ok


def energy_bounds_check(trace: EnergyTrace, nl: Nonlinearity, lam1: float, beta: float | None = None, C1: float | None = None,
                        C2: float | None = None, C0: float | None = None) -> EnergyBoundsReport:
    """Check beta N - C1 <= totalE <= C2 (1 + N^2) and N(t) <= C0 (1 + N(0)^2), N = |(u, u_t)|^2.

    Constants that are not supplied are fitted: beta from the sign margin of
    F when it is positive (else 1/2), C1 as the smallest admissible offset,
    C2 and C0 as the smallest constants making the chains hold.
    """
    N = np.atleast_2d(trace.norm2.T).T
    tot = np.atleast_2d(trace.totalE_int.T).T
    delta = sign_margin(nl, lam1)
    construction = delta / (2 * lam1) if np.isfinite(delta) else None
    inflate = 1 + 1e-12
    if beta is None:
        beta = construction if construction is not None else 0.5
    if C1 is None:
        C1 = max(0.0, float((beta * N - tot).max())) * inflate
    if C2 is None:
        C2 = float((tot / (1 + N**2)).max()) * inflate
    if C0 is None:
        C0 = float((N / (1 + N[0] ** 2)).max()) * inflate
    low = beta * N - C1 <= tot
    up = tot <= C2 * (1 + N**2)
    comp = N <= C0 * (1 + N[0] ** 2)
    bad = ~(low & up & comp).all(1)
    first = int(np.argmax(bad)) if bad.any() else None
    return EnergyBoundsReport(float(beta), float(C1), float(C2), float(C0), construction, bool(low.all()), bool(up.all()),
                              bool(comp.all()), first)


@dataclass
class LipschitzReport:
    D_hat: float
    ratios: np.ndarray
    degenerate: bool
    unstable: bool
    L_bound: float
    gronwall_ok: bool


def lipschitz_dependence(grid: Grid, z1, z2, damping: DampingCoefficient, nl: Nonlinearity, T: float, norm_cap: float | None = None,
                         dt: float | None = None, cfl: float = 0.5, lam1: float | None = None, op: WaveOperator | None = None) -> LipschitzReport:
    """Estimate D_BT = max_t |z1(t) - z2(t)|^2 / |z1(0) - z2(0)|^2 by running both trajectories.

    The Gronwall bound compares against exp(L T) with
    L = max |f'| over the range of both trajectories divided by sqrt(lam1).
    """
    op = op or WaveOperator(grid)
    lam1 = lam1 if lam1 is not None else first_dirichlet_eigenvalue(grid)
    u0 = np.stack([np.asarray(z1[0], float).reshape(grid.shape), np.asarray(z2[0], float).reshape(grid.shape)], -1)
    u1 = np.stack([np.asarray(z1[1], float).reshape(grid.shape), np.asarray(z2[1], float).reshape(grid.shape)], -1)
    if norm_cap is not None and np.any(np.sqrt(hnorm2(op, u0, u1)) > norm_cap * (1 + 1e-12)):
        raise ValueError("initial data outside the bounded set")
    umax = [0.0]

    def diff(n, t, u, w):
        umax[0] = max(umax[0], float(np.abs(u).max()))
        return float(op.grad_sq(u[:, 0] - u[:, 1]) + op.l2sq(w[:, 0] - w[:, 1]))

    traj = solve_semilinear(grid, u0, u1, damping, nl, T=T, dt=dt, cfl=cfl, lam1=lam1, monitors={"d": diff}, op=op)
    d = traj.diagnostics["d"]
    if d[0] == 0:
        return LipschitzReport(0.0, np.zeros_like(d), True, False, 0.0, True)
    ratios = d / d[0]
    D = float(ratios.max())
    zz = np.linspace(-umax[0], umax[0], 2001)
    L = float(np.abs(nl.df(zz)).max()) / np.sqrt(lam1)
    return LipschitzReport(D, ratios, False, bool(not np.isfinite(D) or D > 1e12), L, bool(D <= np.exp(L * T) * (1 + 1e-9)))
