"""Control regions, escape potentials, the admissible-region builder and overlap covers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import GeometryError, Grid, MeasurePair, measure_masks


class InfeasibleBudget(ValueError):
    """The requested budget cannot be met at this grid spacing."""

    def __init__(self, message: str, eps_min: float):
        super().__init__(message)
        self.eps_min = eps_min


# ---------------------------------------------------------------------------
# control regions


@dataclass(eq=False)
class ControlRegion:
    """Cell mask plus boundary-segment mask with budget bookkeeping."""

    cells: np.ndarray
    boundary: np.ndarray
    grid: Grid = field(repr=False)
    epsilon: float | None = None
    epsilon0: float | None = None
    tag: str = "ad-hoc"
    name: str = ""

    def __post_init__(self):
        self.cells = self.grid.check_mask(self.cells, "region cells").astype(bool) & self.grid.inside
        self.boundary = np.asarray(self.boundary, dtype=bool)
        if self.boundary.shape != (len(self.grid.segments),):
            raise GeometryError("boundary mask does not match the grid's boundary segments")
        if self.tag not in ("admissible", "ad-hoc"):
            raise ValueError(f"unknown provenance tag {self.tag!r}")

    @staticmethod
    def from_cells(grid: Grid, cells, **kw) -> "ControlRegion":
        cells = grid.check_mask(cells, "region cells").astype(bool) & grid.inside
        return ControlRegion(cells, grid.segment_cells_mask(cells), grid, **kw)

    @staticmethod
    def empty(grid: Grid, **kw) -> "ControlRegion":
        return ControlRegion.from_cells(grid, np.zeros(grid.shape, dtype=bool), **kw)

    @property
    def measure(self) -> MeasurePair:
        return measure_masks(self.grid, self.cells, self.boundary)

    def union(self, other: "ControlRegion") -> "ControlRegion":
        return ControlRegion(self.cells | other.cells, self.boundary | other.boundary, self.grid)

    def intersection(self, other: "ControlRegion") -> "ControlRegion":
        return ControlRegion(self.cells & other.cells, self.boundary & other.boundary, self.grid)

    def dilate(self, cells: int = 1) -> "ControlRegion":
        return ControlRegion.from_cells(self.grid, dilate(self.cells, cells), name=self.name)

    def is_empty(self) -> bool:
        return not (self.cells.any() or self.boundary.any())


def dilate(mask: np.ndarray, steps: int = 1, diagonal: bool = True) -> np.ndarray:
    """Grow a cell mask by whole cells (3x3 neighbourhood, or plus-shaped)."""
    out = np.asarray(mask, dtype=bool).copy()
    for _ in range(steps):
        m = out.copy()
        m[1:, :] |= out[:-1, :]
        m[:-1, :] |= out[1:, :]
        m[:, 1:] |= out[:, :-1]
        m[:, :-1] |= out[:, 1:]
        if diagonal:
            m[1:, 1:] |= out[:-1, :-1]
            m[:-1, :-1] |= out[1:, 1:]
            m[1:, :-1] |= out[:-1, 1:]
            m[:-1, 1:] |= out[1:, :-1]
        out = m
    return out


def check_epsilon_controllable(region: ControlRegion, eps: float, grid: Grid | None = None):
    """True iff interior area plus boundary length is below eps."""
    m = measure_masks(grid or region.grid, region.cells, region.boundary)
    return bool(m.total < eps), m


# ---------------------------------------------------------------------------
# reference scenarios on the bounding rectangle; a cell belongs to a preset
# only when the whole closed cell lies inside the preset set


def _cell_edges(grid: Grid):
    i = np.arange(grid.nx)[:, None]
    j = np.arange(grid.ny)[None, :]
    x0 = grid.origin[0] + i * grid.h
    y0 = grid.origin[1] + j * grid.h
    return x0, x0 + grid.h, y0, y0 + grid.h


_TOL = 1e-12


def frame_region(grid: Grid, width: float = 0.05) -> ControlRegion:
    """Collar of the given width along the whole boundary."""
    bx0, bx1, by0, by1 = grid.domain.bbox
    x0, x1, y0, y1 = _cell_edges(grid)
    cells = (x1 <= bx0 + width + _TOL) | (x0 >= bx1 - width - _TOL) | (y1 <= by0 + width + _TOL) | (y0 >= by1 - width - _TOL)
    return ControlRegion.from_cells(grid, np.broadcast_to(cells, grid.shape), name="omega1")


GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def cross_region(grid: Grid, half_width: float = 0.025, center=None) -> ControlRegion:
    """Thin horizontal and vertical bands through a centre point.

    The default centre is the golden-section point (g, 1 - g) of the bounding
    box, which keeps the bands off the nodal lines of low sine modes.
    """
    bx0, bx1, by0, by1 = grid.domain.bbox
    if center is None:
        center = (bx0 + GOLDEN * (bx1 - bx0), by0 + (1 - GOLDEN) * (by1 - by0))
    cx, cy = center
    x0, x1, y0, y1 = _cell_edges(grid)
    vert = (x0 >= cx - half_width - _TOL) & (x1 <= cx + half_width + _TOL)
    horiz = (y0 >= cy - half_width - _TOL) & (y1 <= cy + half_width + _TOL)
    return ControlRegion.from_cells(grid, np.broadcast_to(vert | horiz, grid.shape), name="omega2")


def strip_region(grid: Grid, width: float = 0.1) -> ControlRegion:
    """Vertical strip along the left edge."""
    x0, x1, _, _ = _cell_edges(grid)
    cells = np.broadcast_to(x1 <= grid.domain.bbox[0] + width + _TOL, grid.shape)
    return ControlRegion.from_cells(grid, cells, name="omega3")


def corner_patch(grid: Grid, side: float = 0.1) -> ControlRegion:
    """Square in the lower-left corner, with its two boundary edges."""
    bx0, _, by0, _ = grid.domain.bbox
    _, x1, _, y1 = _cell_edges(grid)
    cells = (x1 <= bx0 + side + _TOL) & (y1 <= by0 + side + _TOL)
    return ControlRegion.from_cells(grid, cells, name="corner")


def whole_region(grid: Grid) -> ControlRegion:
    return ControlRegion.from_cells(grid, grid.inside.copy(), name="whole")


PRESETS = {
    "omega1": frame_region,
    "omega2": cross_region,
    "omega3": strip_region,
    "corner": corner_patch,
    "whole": whole_region,
}


def preset_region(name: str, grid: Grid, **params) -> ControlRegion:
    try:
        fn = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return fn(grid, **params)


# ---------------------------------------------------------------------------
# escape potentials


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle [x0, x1] x [y0, y1]; infinite sides allowed."""

    x0: float
    x1: float
    y0: float
    y1: float

    def contains(self, p: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        return (
            (p[:, 0] >= self.x0 - tol) & (p[:, 0] <= self.x1 + tol) & (p[:, 1] >= self.y0 - tol) & (p[:, 1] <= self.y1 + tol)
        )

    def distance(self, p: np.ndarray):
        """Euclidean distance to the box with its gradient and Hessian."""
        lo = np.array([self.x0, self.y0])
        hi = np.array([self.x1, self.y1])
        q = np.where(p < lo, p - lo, np.where(p > hi, p - hi, 0.0))
        r = np.hypot(q[:, 0], q[:, 1])
        safe = np.where(r > 0, r, 1.0)
        g = q / safe[:, None]
        act = (q != 0).astype(float)
        H = (act[:, :, None] * np.eye(2)[None] - g[:, :, None] * g[:, None, :]) / safe[:, None, None]
        H[r == 0] = 0.0
        return r, g, H


def _psi(t):
    t = np.asarray(t, dtype=float)
    pos = t > 0
    ts = np.where(pos, t, 1.0)
    v = np.where(pos, np.exp(-1.0 / ts), 0.0)
    d1 = np.where(pos, v / ts**2, 0.0)
    d2 = np.where(pos, v * (1.0 - 2.0 * ts) / ts**4, 0.0)
    return v, d1, d2


def smooth_step(t):
    """C-infinity step S with S = 0 for t <= 0 and S = 1 for t >= 1, plus S' and S''."""
    t = np.asarray(t, dtype=float)
    A, A1, A2 = _psi(t)
    B, B1, B2 = _psi(1.0 - t)
    B1, B2 = -B1, B2
    D = A + B
    N = A1 * B - A * B1
    S = A / D
    S1 = N / D**2
    N1 = A2 * B - A * B2
    S2 = (N1 * D - 2.0 * N * (A1 + B1)) / D**3
    return S, S1, S2


@dataclass(frozen=True)
class Chart:
    """Quadratic chart s/2 |x - p|^2 + <e, x - p> + m, optionally cut off.

    ``kind`` is "interior" (e = 0) or "boundary" (e = unit inward axis).
    The cutoff equals 1 on ``core`` and falls to 0 over ``band`` outside it.
    """

    kind: str
    center: tuple[float, float]
    axis: tuple[float, float] = (0.0, 0.0)
    offset: float = 1.0
    scale: float = 1.0
    support: Box | None = None
    core: Box | None = None
    band: float = 0.0

    def raw(self, p: np.ndarray):
        c = np.asarray(self.center)
        e = np.asarray(self.axis)
        dx = p - c
        val = 0.5 * self.scale * (dx**2).sum(1) + dx @ e + self.offset
        grad = self.scale * dx + e[None, :]
        hess = np.broadcast_to(self.scale * np.eye(2), (len(p), 2, 2)).copy()
        return val, grad, hess

    def cutoff(self, p: np.ndarray):
        n = len(p)
        if self.core is None or self.band <= 0:
            return np.ones(n), np.zeros((n, 2)), np.zeros((n, 2, 2))
        r, gr, Hr = self.core.distance(p)
        S, S1, S2 = smooth_step(1.0 - r / self.band)
        grad = -S1[:, None] * gr / self.band
        hess = S2[:, None, None] * gr[:, :, None] * gr[:, None, :] / self.band**2 - S1[:, None, None] * Hr / self.band
        return S, grad, hess

    def evaluate(self, p: np.ndarray):
        v, g, H = self.raw(p)
        if self.core is None:
            return v, g, H
        rho, grho, Hrho = self.cutoff(p)
        val = rho * v
        grad = rho[:, None] * g + v[:, None] * grho
        hess = (
            rho[:, None, None] * H
            + grho[:, :, None] * g[:, None, :]
            + g[:, :, None] * grho[:, None, :]
            + v[:, None, None] * Hrho
        )
        return val, grad, hess


@dataclass(frozen=True, eq=False)
class EscapePotential:
    """Piecewise chart potential; each point uses the first chart whose support holds it."""

    charts: tuple[Chart, ...]
    grid: Grid = field(repr=False)

    def _assign(self, p: np.ndarray) -> np.ndarray:
        owner = np.full(len(p), -1)
        for k, ch in enumerate(self.charts):
            free = owner < 0
            if ch.support is None:
                owner[free] = k
            else:
                owner[free & ch.support.contains(p)] = k
        return owner

    def evaluate(self, points, check_domain: bool = True):
        """Values, Euclidean gradients and Hessians at an (n, 2) point array."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if check_domain:
            ok = self.grid.domain.contains(p[:, 0], p[:, 1], tol=1e-12)
            if not ok.all():
                bad = p[np.argmin(ok)]
                raise GeometryError(f"point {tuple(bad)} lies outside the domain")
        owner = self._assign(p)
        val = np.zeros(len(p))
        grad = np.zeros((len(p), 2))
        hess = np.zeros((len(p), 2, 2))
        for k, ch in enumerate(self.charts):
            sel = owner == k
            if sel.any():
                val[sel], grad[sel], hess[sel] = ch.evaluate(p[sel])
        return val, grad, hess

    def metric(self, points, check_domain: bool = True):
        """Value, |grad d|_g, smallest eigenvalue of the metric Hessian, Euclidean gradient."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        val, grad, hess = self.evaluate(p, check_domain)
        gnorm, lam = metric_corrections(self.grid.domain.speed, p, grad, hess)
        return val, gnorm, lam, grad

    @staticmethod
    def single(grid: Grid, center, axis=(0.0, 0.0), offset: float = 1.0, scale: float = 1.0) -> "EscapePotential":
        kind = "boundary" if np.any(np.asarray(axis) != 0) else "interior"
        return EscapePotential((Chart(kind, tuple(map(float, center)), tuple(map(float, axis)), offset, scale),), grid)


def metric_corrections(speed, p, grad, hess):
    """|grad d|_g and min eigenvalue of Hess_g d relative to g, for g = c^-2 delta."""
    c = speed.value(p[:, 0], p[:, 1])
    gnorm = c * np.hypot(grad[:, 0], grad[:, 1])
    if speed.is_constant:
        H = hess * c[:, None, None] ** 2
    else:
        cx, cy = speed.grad(p[:, 0], p[:, 1])
        s = -np.stack([cx, cy], axis=1) / c[:, None]  # grad of log(1/c)
        sd = (s * grad).sum(1)
        Hg = hess - (s[:, :, None] * grad[:, None, :] + grad[:, :, None] * s[:, None, :]) + sd[:, None, None] * np.eye(2)
        H = Hg * c[:, None, None] ** 2
    lam = np.linalg.eigvalsh(0.5 * (H + np.swapaxes(H, 1, 2)))[:, 0]
    return gnorm, lam


def eval_escape(d: EscapePotential, x):
    """Value, gradient and Hessian of d at a single point of the domain."""
    v, g, H = d.evaluate(np.asarray(x, dtype=float)[None, :])
    return float(v[0]), g[0], H[0]


@dataclass
class ConditionResult:
    passed: bool
    worst: float
    point: tuple | None = None
    note: str = ""


@dataclass
class EscapeReport:
    conditions: dict[str, ConditionResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions.values())

    def summary(self) -> dict:
        return {k: {"passed": c.passed, "worst": c.worst, "point": c.point, "note": c.note} for k, c in self.conditions.items()}


def _cell_nodes(grid: Grid, mask: np.ndarray) -> np.ndarray:
    node = np.zeros((grid.nx + 1, grid.ny + 1), dtype=bool)
    node[:-1, :-1] |= mask
    node[1:, :-1] |= mask
    node[:-1, 1:] |= mask
    node[1:, 1:] |= mask
    X, Y = grid.corners_of_cells()
    return np.stack([X[node], Y[node]], axis=1)


def verify_escape_conditions(d: EscapePotential, V: np.ndarray, grid: Grid, tol: float = 1e-6) -> EscapeReport:
    """Sample the escape-potential conditions on closure(V).

    Samples are V's cell centres and cell corners plus the midpoints of the
    boundary segments adjacent to V.
    """
    V = grid.check_mask(V, "V").astype(bool) & grid.inside
    X, Y = grid.centers()
    pts = np.concatenate([np.stack([X[V], Y[V]], axis=1), _cell_nodes(grid, V)])
    segs = V[grid.segments.cell[:, 0], grid.segments.cell[:, 1]]
    mids = grid.segments.midpoint[segs]
    pts = np.concatenate([pts, mids])
    res = {}
    res["d1"] = ConditionResult(all(isinstance(c, Chart) for c in d.charts), 0.0, None, "analytic charts with exp(-1/t) cutoffs")
    if len(pts) == 0:
        for k in ("d2", "d3", "d4"):
            res[k] = ConditionResult(True, float("nan"), None, "V is empty")
        return EscapeReport(res)
    val, gnorm, lam, grad = d.metric(pts, check_domain=False)
    k = int(np.argmin(lam))
    res["d2"] = ConditionResult(bool(lam[k] >= 1.0 - tol), float(lam[k]), tuple(pts[k]))
    kg, kv = int(np.argmin(gnorm)), int(np.argmin(val))
    ok3 = bool(gnorm[kg] > tol and val[kv] > 0)
    worst_pt = pts[kg] if gnorm[kg] <= tol or val[kv] > 0 else pts[kv]
    res["d3"] = ConditionResult(ok3, float(min(gnorm[kg], val[kv])), tuple(worst_pt), f"min|grad|={gnorm[kg]:.3g}, min d={val[kv]:.3g}")
    if len(mids):
        _, _, _, gm = d.metric(mids, check_domain=False)
        c = grid.domain.speed.value(mids[:, 0], mids[:, 1])
        dots = c * (gm * grid.segments.normal[segs]).sum(1)
        j = int(np.argmax(dots))
        res["d4"] = ConditionResult(bool(dots[j] < -tol), float(dots[j]), tuple(mids[j]))
    else:
        res["d4"] = ConditionResult(True, float("nan"), None, "V does not touch the boundary")
    return EscapeReport(res)


# ---------------------------------------------------------------------------
# admissible region builder


def _layout(k: int) -> tuple[int, int]:
    best = None
    for a in range(2, int(np.sqrt(k)) + 1):
        if k % a == 0 and k // a >= 2:
            best = (a, k // a)
    if best is None:
        raise ValueError(f"chart count k={k} must factor as a*b with a, b >= 2 (e.g. 4, 6, 9)")
    return best


@dataclass(eq=False)
class AdmissibleBuild:
    """Everything produced by the builder; V, omega and potential are the main outputs."""

    V: np.ndarray
    omega: ControlRegion
    potential: EscapePotential
    W_parts: list[np.ndarray]
    V_parts: list[np.ndarray]
    complement: np.ndarray  # closure(M \ V) as a cell mask
    layers: int
    layout: tuple[int, int]
    band_measures: list[MeasurePair]
    measures: dict[str, MeasurePair]

    def __iter__(self):
        return iter((self.V, self.omega, self.potential))


def build_admissible_region(
    grid: Grid, eps: float, eps0: float, k: int = 4, offset: float = 1.0, separation: int = 2
) -> AdmissibleBuild:
    """Cover the rectangle by k chart patches, shrink them, and assemble V, omega and d.

    Patches W_j form an a x b layout.  Each is shrunk to U_j = V_j by s layers on
    its interior-facing sides, with s = max(1, ceil(separation / 2)) so that
    distinct V_j are at least ``separation`` cells apart.  Corner patches take the
    boundary chart with the inward bisector as axis, edge patches the boundary
    chart with the inward normal, and inner patches the interior chart with its
    centre placed outside the patch so the gradient never vanishes on it.
    """
    if not 0 < eps0 < eps:
        raise ValueError(f"need 0 < eps0 < eps, got eps0={eps0}, eps={eps}")
    if grid.domain.kind != "rectangle":
        raise GeometryError("the admissible builder supports rectangular domains")
    a, b = _layout(k)
    s = max(1, int(np.ceil(separation / 2)))
    nx, ny, h = grid.nx, grid.ny, grid.h
    ox, oy = grid.origin
    xe = np.round(np.linspace(0, nx, a + 1)).astype(int)
    ye = np.round(np.linspace(0, ny, b + 1)).astype(int)
    if np.any(np.diff(xe) <= 2 * s) or np.any(np.diff(ye) <= 2 * s):
        raise InfeasibleBudget("grid too coarse for the chart layout", float("inf"))
    W_parts, V_parts, charts, bands = [], [], [], []
    for ia in range(a):
        for jb in range(b):
            i0, i1, j0, j1 = xe[ia], xe[ia + 1], ye[jb], ye[jb + 1]
            left, right, bottom, top = i0 == 0, i1 == nx, j0 == 0, j1 == ny
            W = np.zeros(grid.shape, dtype=bool)
            W[i0:i1, j0:j1] = True
            u0 = i0 if left else i0 + s
            u1 = i1 if right else i1 - s
            v0 = j0 if bottom else j0 + s
            v1 = j1 if top else j1 - s
            U = np.zeros(grid.shape, dtype=bool)
            U[u0:u1, v0:v1] = True
            W_parts.append(W)
            V_parts.append(U)
            bands.append(measure_masks(grid, W & ~U))
            support = Box(ox + i0 * h, ox + i1 * h, oy + j0 * h, oy + j1 * h)
            core = Box(
                -np.inf if left else ox + u0 * h,
                np.inf if right else ox + u1 * h,
                -np.inf if bottom else oy + v0 * h,
                np.inf if top else oy + v1 * h,
            )
            inward = np.array([float(left) - float(right), float(bottom) - float(top)])
            sx0, sx1, sy0, sy1 = support.x0, support.x1, support.y0, support.y1
            if np.count_nonzero(inward) == 2:
                center = (sx0 if left else sx1, sy0 if bottom else sy1)
                axis = inward / np.linalg.norm(inward)
                kind = "boundary"
            elif np.count_nonzero(inward) == 1:
                mx, my = 0.5 * (sx0 + sx1), 0.5 * (sy0 + sy1)
                center = (sx0 if left else sx1 if right else mx, sy0 if bottom else sy1 if top else my)
                axis = inward
                kind = "boundary"
            else:
                wdt, hgt = sx1 - sx0, sy1 - sy0
                center = (sx0 - 0.5 * wdt, sy0 - 0.5 * hgt)
                axis = np.zeros(2)
                kind = "interior"
            charts.append(Chart(kind, tuple(map(float, center)), tuple(map(float, axis)), offset, 1.0, support, core, s * h))
    V = np.zeros(grid.shape, dtype=bool)
    for U in V_parts:
        V |= U
    complement = grid.inside & ~V
    omega_cells = dilate(complement, 1) & grid.inside
    ratio = eps0 / eps
    m_comp = measure_masks(grid, complement)
    m_ring = measure_masks(grid, omega_cells & V)
    m_omega = measure_masks(grid, omega_cells)
    band_max = max(max(m.interior, m.boundary) for m in bands)
    eps_min = max(2 * k * band_max / ratio, m_comp.total / ratio, m_ring.total / (1 - ratio), m_omega.total)
    per = eps0 / (2 * k)
    if band_max >= per or m_comp.total >= eps0 or m_ring.total >= eps - eps0 or m_omega.total >= eps:
        raise InfeasibleBudget(
            f"budget eps={eps:g}, eps0={eps0:g} infeasible at h={h:g} with k={k}: "
            f"chart band measure {band_max:.4g} vs eps0/(2k)={per:.4g}, "
            f"closure(M\\V) {m_comp.total:.4g} vs eps0, omega {m_omega.total:.4g} vs eps; "
            f"minimal feasible eps at this h (same eps0/eps ratio) exceeds {eps_min:.4g}",
            eps_min,
        )
    omega = ControlRegion.from_cells(grid, omega_cells, epsilon=eps, epsilon0=eps0, tag="admissible", name="admissible")
    potential = EscapePotential(tuple(charts), grid)
    return AdmissibleBuild(
        V, omega, potential, W_parts, V_parts, complement, s, (a, b), bands,
        {"complement": m_comp, "omega_cap_V": m_ring, "omega": m_omega},
    )


def minimal_feasible_resolution(eps: float, eps0: float, k: int = 4, start: int = 128, limit: int = 8192, **kw) -> int:
    """Smallest power-of-two multiple of ``start`` at which the builder succeeds on the unit square."""
    from .geometry import Domain, build_grid

    r = start
    while r <= limit:
        try:
            build_admissible_region(build_grid(Domain.unit_square(), r), eps, eps0, k, **kw)
            return r
        except InfeasibleBudget:
            r *= 2
    raise InfeasibleBudget(f"no feasible resolution up to {limit}", float("inf"))


# ---------------------------------------------------------------------------
# overlapping decomposition


@dataclass(eq=False)
class OverlapDecomposition:
    omegas: list[np.ndarray]
    potentials: list[EscapePotential]
    edges: list[tuple[int, int]]
    V_parts: list[np.ndarray]
    checks: dict[str, bool] = field(default_factory=dict)
    reports: list[EscapeReport] = field(default_factory=list)

    def degree(self) -> list[int]:
        deg = [0] * len(self.omegas)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg


def build_overlap_decomposition(grid: Grid, build: AdmissibleBuild, omega: ControlRegion | None = None, tol: float = 1e-6) -> OverlapDecomposition:
    """Dilate each chart patch by one cell and extend its chart formula without cutoff."""
    omega = omega or build.omega
    omegas = [dilate(W, 1, diagonal=False) & grid.inside for W in build.W_parts]
    pots = []
    for ch in build.potential.charts:
        pots.append(EscapePotential((Chart(ch.kind, ch.center, ch.axis, ch.offset, ch.scale),), grid))
    n = len(omegas)
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if (omegas[i] & build.W_parts[j]).any() or (omegas[j] & build.W_parts[i]).any():
                edges.append((i, j))
    cover = np.zeros(grid.shape, dtype=bool)
    for O in omegas:
        cover |= O
    dec = OverlapDecomposition(omegas, pots, edges, build.V_parts)
    lonely = [j for j, d in enumerate(dec.degree()) if d == 0]
    if lonely:
        raise GeometryError(f"disconnected cover: sub-domains {lonely} overlap nothing")
    reports = []
    for j in range(n):
        rep = verify_escape_conditions(pots[j], omegas[j], grid, tol)
        # item 6 only concerns the boundary of M inside closure(V_j)
        rep6 = verify_escape_conditions(pots[j], build.V_parts[j], grid, tol)
        rep.conditions["d4"] = rep6.conditions["d4"]
        reports.append(rep)
    dec.reports = reports
    dec.checks = {
        "cover": bool((cover | ~grid.inside).all()),
        "overlapping": not lonely,
        "V_inside": all(not (V & ~O).any() for V, O in zip(build.V_parts, omegas)),
        "meets_omega": all((O & omega.cells).any() for O in omegas),
        "potentials": all(r.passed for r in reports),
    }
    return dec


# ---------------------------------------------------------------------------
# boundary partition by the sign of <grad d, nu>


@dataclass
class BoundaryPartition:
    gamma0: np.ndarray
    gamma1: np.ndarray
    gamma1_in_omega: bool | None = None


def _boundary_dots(d: EscapePotential, grid: Grid, sel: np.ndarray) -> np.ndarray:
    mids = grid.segments.midpoint[sel]
    _, _, _, g = d.metric(mids, check_domain=False)
    c = grid.domain.speed.value(mids[:, 0], mids[:, 1])
    return c * (g * grid.segments.normal[sel]).sum(1)


def boundary_partition(potentials, grid: Grid, omega: ControlRegion | None = None, domains=None) -> BoundaryPartition:
    """Gamma0 = union of {<grad d_j, nu> <= 0} over the charts, Gamma1 = the rest.

    ``potentials`` is one EscapePotential or a list; ``domains`` optionally gives
    each potential's cell mask (a segment is judged by d_j only if its adjacent
    cell lies there).  A multi-chart potential with supports is split per chart.
    """
    if isinstance(potentials, EscapePotential):
        if all(ch.support is not None for ch in potentials.charts) and len(potentials.charts) > 1:
            pots, doms = [], []
            X, Y = grid.centers()
            P = np.stack([X.ravel(), Y.ravel()], axis=1)
            for ch in potentials.charts:
                pots.append(EscapePotential((Chart(ch.kind, ch.center, ch.axis, ch.offset, ch.scale),), grid))
                doms.append(ch.support.contains(P, tol=-1e-12).reshape(grid.shape))
            potentials, domains = pots, doms
        else:
            potentials = [potentials]
    m = len(grid.segments)
    gamma0 = np.zeros(m, dtype=bool)
    for k, d in enumerate(potentials):
        sel = np.ones(m, dtype=bool) if domains is None else grid.segment_cells_mask(domains[k])
        dots = _boundary_dots(d, grid, sel)
        idx = np.flatnonzero(sel)
        gamma0[idx[dots <= 0]] = True
    gamma1 = ~gamma0
    inside = None
    if omega is not None:
        inside = bool(not (gamma1 & ~omega.boundary).any())
    return BoundaryPartition(gamma0, gamma1, inside)
