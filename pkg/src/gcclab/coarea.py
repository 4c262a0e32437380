"""Coarea identity checks and the prism bound from boundary to interior integrals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Grid
from .regions import ControlRegion

# segments per marching-squares case, as pairs of cell edges
# edges: 0 bottom, 1 right, 2 top, 3 left
_CASES = {
    1: [(3, 0)], 2: [(0, 1)], 3: [(3, 1)], 4: [(1, 2)], 6: [(0, 2)], 7: [(3, 2)], 8: [(2, 3)],
    9: [(0, 2)], 11: [(1, 2)], 12: [(1, 3)], 13: [(0, 1)], 14: [(0, 3)],
}


def contour_segments(V: np.ndarray, xs: np.ndarray, ys: np.ndarray, level: float, cells: np.ndarray | None = None) -> np.ndarray:
    """Marching-squares segments of {V = level} for node values V of shape (nx+1, ny+1).

    Returns an (m, 2, 2) array of segment endpoints.  Saddles are resolved by
    the mean of the four corner values.
    """
    v0, v1, v2, v3 = V[:-1, :-1], V[1:, :-1], V[1:, 1:], V[:-1, 1:]
    case = (v0 > level) * 1 + (v1 > level) * 2 + (v2 > level) * 4 + (v3 > level) * 8
    if cells is not None:
        case = np.where(cells, case, 0)
    X0, Y0 = np.meshgrid(xs[:-1], ys[:-1], indexing="ij")
    X1, Y1 = np.meshgrid(xs[1:], ys[1:], indexing="ij")

    def frac(a, b):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.clip((level - a) / (b - a), 0.0, 1.0)

    def edge_point(e, sel):
        if e == 0:
            s = frac(v0[sel], v1[sel])
            return np.stack([X0[sel] + s * (X1[sel] - X0[sel]), Y0[sel]], -1)
        if e == 1:
            s = frac(v1[sel], v2[sel])
            return np.stack([X1[sel], Y0[sel] + s * (Y1[sel] - Y0[sel])], -1)
        if e == 2:
            s = frac(v3[sel], v2[sel])
            return np.stack([X0[sel] + s * (X1[sel] - X0[sel]), Y1[sel]], -1)
        s = frac(v0[sel], v3[sel])
        return np.stack([X0[sel], Y0[sel] + s * (Y1[sel] - Y0[sel])], -1)

    out = []
    for c, pairs in _CASES.items():
        sel = case == c
        if sel.any():
            for a, b in pairs:
                out.append(np.stack([edge_point(a, sel), edge_point(b, sel)], 1))
    centre = 0.25 * (v0 + v1 + v2 + v3)
    for c, high, low in ((5, [(0, 1), (2, 3)], [(3, 0), (1, 2)]), (10, [(3, 0), (1, 2)], [(0, 1), (2, 3)])):
        for pairs, cond in ((high, centre > level), (low, centre <= level)):
            sel = (case == c) & cond
            if sel.any():
                for a, b in pairs:
                    out.append(np.stack([edge_point(a, sel), edge_point(b, sel)], 1))
    if not out:
        return np.zeros((0, 2, 2))
    return np.concatenate(out)


def _as_callable(f):
    if callable(f):
        return f
    val = float(f)
    return lambda x, y: np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, val)


@dataclass
class LevelSetFamily:
    levels: np.ndarray
    lengths: np.ndarray
    integrals: np.ndarray
    segments: list[np.ndarray] = field(default_factory=list, repr=False)


@dataclass
class CoareaResult:
    lhs: float
    rhs: float
    rel_error: float
    family: LevelSetFamily = field(repr=False)


def level_set_family(phi, f, grid: Grid, levels: int = 256, keep_segments: bool = False) -> LevelSetFamily:
    """Contour line integrals of f over a ladder of levels spanning the range of phi.

    The extreme levels are nudged inward by 1e-12 of the range so that the
    one-sided limits are used there.
    """
    if levels < 2:
        raise ValueError("need at least 2 levels")
    f = _as_callable(f)
    NX, NY = grid.corners_of_cells()
    V = phi(NX, NY)
    xs, ys = NX[:, 0], NY[0, :]
    t_lo, t_hi = float(V.min()), float(V.max())
    ts = np.linspace(t_lo, t_hi, levels)
    delta = 1e-12 * (t_hi - t_lo)
    lengths = np.zeros(levels)
    integrals = np.zeros(levels)
    keep = []
    for k, t in enumerate(ts):
        tt = min(max(t, t_lo + delta), t_hi - delta)
        seg = contour_segments(V, xs, ys, tt, grid.inside)
        ell = np.hypot(*(seg[:, 1] - seg[:, 0]).T) if len(seg) else np.zeros(0)
        mid = seg.mean(1) if len(seg) else np.zeros((0, 2))
        lengths[k] = ell.sum()
        integrals[k] = (ell * f(mid[:, 0], mid[:, 1])).sum() if len(seg) else 0.0
        if keep_segments:
            keep.append(seg)
    return LevelSetFamily(ts, lengths, integrals, keep)


def coarea_check(phi, grad_phi, f, grid: Grid, levels: int = 256) -> CoareaResult:
    """Compare the volume integral of |grad phi| f with the integral over t of the level-curve integrals."""
    fc = _as_callable(f)
    X, Y = grid.centers()
    fv = fc(X, Y)
    if np.any(fv[grid.inside] < 0):
        raise ValueError("f must be nonnegative")
    NX, NY = grid.corners_of_cells()
    if np.any(fc(NX, NY) < 0):
        raise ValueError("f must be nonnegative")
    gx, gy = grad_phi(X, Y)
    lhs = float((np.hypot(gx, gy) * fv)[grid.inside].sum() * grid.h**2)
    fam = level_set_family(phi, fc, grid, levels)
    rhs = float(np.trapezoid(fam.integrals, fam.levels))
    rel = abs(lhs - rhs) / max(abs(lhs), 1e-300)
    return CoareaResult(lhs, rhs, rel, fam)


# ---------------------------------------------------------------------------
# prism bound


@dataclass
class PrismArc:
    segments: np.ndarray  # boundary segment indices
    columns: np.ndarray  # (n_seg, n_p) flat cell indices, nearest the boundary first
    thickness: int  # minimal inward thickness of omega in cells
    n_p: int
    h_p: float
    length: float
    C_g: float


@dataclass
class PrismConstruction:
    arcs: list[PrismArc]
    h: float

    @property
    def cells(self) -> np.ndarray:
        if not self.arcs:
            return np.zeros(0, dtype=int)
        return np.unique(np.concatenate([a.columns.ravel() for a in self.arcs]))


def build_prisms(gamma: np.ndarray, omega: ControlRegion, grid: Grid) -> PrismConstruction:
    """One prism per straight connected arc of gamma, of height half omega's inward thickness."""
    gamma = np.asarray(gamma, dtype=bool)
    segs = grid.segments
    not_in = gamma & ~(omega.boundary & omega.cells[segs.cell[:, 0], segs.cell[:, 1]])
    if not_in.any():
        raise ValueError(f"boundary arc not inside omega: {int(not_in.sum())} segments outside")
    idx = np.flatnonzero(gamma)
    arcs = []
    if len(idx) == 0:
        return PrismConstruction(arcs, grid.h)
    breaks = np.flatnonzero((np.diff(idx) != 1) | (np.diff(segs.edge[idx]) != 0)) + 1
    speed = grid.domain.speed
    X, Y = grid.centers()
    for run in np.split(idx, breaks):
        n = segs.normal[run[0]]
        step = -np.round(n).astype(int)
        if np.abs(np.abs(n).max() - 1.0) > 1e-12:
            raise ValueError("prisms need axis-aligned boundary arcs")
        cols = []
        thick = []
        for s in run:
            i, j = segs.cell[s]
            col = []
            while 0 <= i < grid.nx and 0 <= j < grid.ny and omega.cells[i, j]:
                col.append(i * grid.ny + j)
                i, j = i + step[0], j + step[1]
            cols.append(col)
            thick.append(len(col))
        m = min(thick)
        n_p = max(1, m // 2)
        columns = np.array([c[:n_p] for c in cols])
        cv = speed.value(X.ravel()[columns], Y.ravel()[columns])
        arcs.append(PrismArc(run, columns, m, n_p, n_p * grid.h, float(segs.length[run].sum()), float(cv.max() / cv.min())))
    return PrismConstruction(arcs, grid.h)


@dataclass
class PrismReport:
    boundary_integral: float
    prism_integral: float
    omega_integral: float
    C_hat: float
    chain_ok: bool
    literal_ok: bool
    arcs: list[dict]

    def summary(self) -> dict:
        return {
            "boundary_integral": self.boundary_integral, "prism_integral": self.prism_integral,
            "omega_integral": self.omega_integral, "C_hat": self.C_hat, "chain_ok": self.chain_ok,
            "literal_ok": self.literal_ok, "arcs": self.arcs,
        }


def prism_terms(prisms: PrismConstruction, f_cells: np.ndarray, f_boundary: np.ndarray, grid: Grid):
    """Per-arc boundary integral B, prism integral P and normal-variation term Tr.

    Columns may carry a trailing ensemble axis.  Tr sums, over the arc, the
    segment length times the total variation of f along the inward column
    starting from the boundary value.  For each column the triangle inequality
    gives f(0) <= mean(column) + variation, which is the discrete trace bound.
    """
    flat = f_cells.reshape((grid.nx * grid.ny,) + f_cells.shape[2:])
    ell = grid.segments.length
    out = []
    for arc in prisms.arcs:
        g0 = f_boundary[arc.segments]
        col = flat[arc.columns]  # (n_seg, n_p, ...)
        L = ell[arc.segments].reshape((-1,) + (1,) * (col.ndim - 2))
        B = (L * g0).sum(0)
        P = (col * (L * grid.h)[:, None]).sum((0, 1))
        samples = np.concatenate([g0[:, None], col], axis=1)
        Tr = (L * np.abs(np.diff(samples, axis=1)).sum(1)).sum(0)
        out.append((B, P, Tr))
    return out


def prism_bound_check(gamma, omega: ControlRegion, f, grid: Grid, f_boundary=None, rtol: float = 1e-12) -> PrismReport:
    """Empirical constant C_hat = int_gamma f / int_omega f and the prism chain per arc.

    The chain asserted is int_arc f <= C_g (P / h_p + Tr) and P <= int_omega f.
    The version without the normal-variation term Tr is reported as
    ``literal_ok``; it is exact for f constant along the inward normal but can
    fail otherwise.
    """
    f_cells = np.asarray(f(*grid.centers()) if callable(f) else f, dtype=float)
    grid.check_mask(f_cells, "f")
    if np.any(f_cells[grid.inside] < 0):
        raise ValueError("f must be nonnegative")
    if f_boundary is None:
        c = grid.segments.cell
        f_boundary = f_cells[c[:, 0], c[:, 1]]
    f_boundary = np.asarray(f_boundary, dtype=float)
    W = float(f_cells[omega.cells].sum() * grid.h**2)
    if W <= 0:
        raise ValueError("f vanishes on omega")
    prisms = build_prisms(gamma, omega, grid)
    chain = literal = True
    arcs = []
    Btot = Ptot = 0.0
    for arc, (B, P, Tr) in zip(prisms.arcs, prism_terms(prisms, f_cells, f_boundary, grid)):
        B, P, Tr = float(B), float(P), float(Tr)
        bound = arc.C_g * (P / arc.h_p + Tr)
        lit = arc.C_g * P / arc.h_p
        ok = B <= bound * (1 + rtol) + 1e-300 and P <= W * (1 + rtol)
        lok = B <= lit * (1 + rtol) + 1e-300 and P <= W * (1 + rtol)
        chain &= ok
        literal &= lok
        Btot += B
        Ptot += P
        arcs.append({
            "segments": int(len(arc.segments)), "length": arc.length, "thickness_cells": arc.thickness,
            "h_p": arc.h_p, "C_g": arc.C_g, "boundary": B, "prism": P, "normal_variation": Tr,
            "chain_ok": bool(ok), "literal_ok": bool(lok),
        })
    return PrismReport(Btot, Ptot, W, Btot / W, bool(chain), bool(literal), arcs)
