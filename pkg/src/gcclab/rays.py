"""Billiard rays, sampled GCC certification and the potential-based ray conditions.

With constant speed rays are straight segments reflected specularly at the
boundary.  With a variable speed c the Hamiltonian system x' = c^2 xi,
xi' = -|xi|^2 c grad c is integrated by RK4 with step doubling.  Hits are the
first entry into the open union of the target's cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Domain, Grid
from .regions import ControlRegion, EscapePotential, _cell_nodes, metric_corrections

CORNER_TOL = 1e-10


@dataclass
class RayState:
    x: np.ndarray
    p: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.p = np.asarray(self.p, dtype=float)


@dataclass
class ReflectionEvent:
    position: np.ndarray
    time: float
    incident: np.ndarray
    reflected: np.ndarray


@dataclass
class TraceResult:
    first_hit_time: float | None
    events: list[ReflectionEvent]
    trapped: bool
    terminated_at_corner: bool
    final: RayState
    path: np.ndarray = field(repr=False)


def mask_rectangles(mask: np.ndarray, grid: Grid) -> np.ndarray:
    """Cover a cell mask by axis-aligned rectangles (x0, x1, y0, y1).

    Runs along x in each row are merged with identical runs in the rows above.
    """
    mask = np.asarray(mask, dtype=bool)
    open_runs: dict[tuple[int, int], int] = {}
    rects = []
    for j in range(mask.shape[1]):
        col = np.concatenate([[False], mask[:, j], [False]])
        d = np.diff(col.astype(np.int8))
        starts, stops = np.flatnonzero(d == 1), np.flatnonzero(d == -1)
        runs = set(zip(starts.tolist(), stops.tolist()))
        for key in list(open_runs):
            if key not in runs:
                rects.append((key[0], key[1], open_runs.pop(key), j))
        for key in runs:
            open_runs.setdefault(key, j)
    for key, j0 in open_runs.items():
        rects.append((key[0], key[1], j0, mask.shape[1]))
    rects.sort(key=lambda r: (r[2], r[0]))
    h = grid.h
    ox, oy = grid.origin
    return np.array([(ox + a * h, ox + b * h, oy + c * h, oy + d * h) for a, b, c, d in rects], dtype=float).reshape(-1, 4)


def region_rectangles(mask: np.ndarray, grid: Grid) -> np.ndarray:
    """Open rectangles whose union is the interior of the closed cell union, up to isolated vertices.

    Row-merged and column-merged covers are combined so that edges shared by
    two cells of the mask lie inside some rectangle.
    """
    rows = mask_rectangles(mask, grid)
    cols = mask_rectangles(np.asarray(mask, dtype=bool).T, _Transposed(grid))[:, [2, 3, 0, 1]]
    return np.unique(np.concatenate([rows, cols]), axis=0)


@dataclass(frozen=True)
class _Transposed:
    grid: Grid

    @property
    def h(self):
        return self.grid.h

    @property
    def origin(self):
        return self.grid.origin[::-1]


def _target_rects(target) -> np.ndarray | None:
    if target is None:
        return None
    if isinstance(target, ControlRegion):
        return region_rectangles(target.cells, target.grid)
    return np.asarray(target, dtype=float).reshape(-1, 4)


def _slab_hits(rects: np.ndarray, x: np.ndarray, d: np.ndarray, s_max: np.ndarray) -> np.ndarray:
    """Smallest s in [0, s_max] with x + s d strictly inside some rectangle; nan if none.

    x, d have shape (m, 2); s_max has shape (m,).
    """
    m = len(x)
    if len(rects) == 0 or m == 0:
        return np.full(m, np.nan)
    lo = np.full((m, len(rects)), -np.inf)
    hi = np.full((m, len(rects)), np.inf)
    for a, (ca, cb) in enumerate(((0, 1), (2, 3))):
        r0, r1 = rects[None, :, ca], rects[None, :, cb]
        xa, da = x[:, a:a + 1], d[:, a:a + 1]
        moving = da != 0
        with np.errstate(divide="ignore", invalid="ignore"):
            t0 = (r0 - xa) / da
            t1 = (r1 - xa) / da
        inside = (xa > r0) & (xa < r1)
        lo = np.maximum(lo, np.where(moving, np.minimum(t0, t1), np.where(inside, -np.inf, np.inf)))
        hi = np.minimum(hi, np.where(moving, np.maximum(t0, t1), np.where(inside, np.inf, -np.inf)))
    ok = (lo < hi) & (hi > 0) & (lo <= s_max[:, None])
    s = np.where(ok, np.maximum(lo, 0.0), np.inf).min(axis=1)
    return np.where(np.isfinite(s), s, np.nan)


def _inside_rects(rects: np.ndarray, p: np.ndarray) -> bool:
    return bool(((p[0] > rects[:, 0]) & (p[0] < rects[:, 1]) & (p[1] > rects[:, 2]) & (p[1] < rects[:, 3])).any())


def _first_wall(domain: Domain, x: np.ndarray, d: np.ndarray, skip: int | None):
    """Next boundary intersection along x + s d: (s, edge index, at_corner)."""
    a = domain.vertices
    e = np.roll(a, -1, axis=0) - a
    denom = d[0] * e[:, 1] - d[1] * e[:, 0]
    rel = a - x
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (rel[:, 0] * e[:, 1] - rel[:, 1] * e[:, 0]) / denom
        u = (rel[:, 0] * d[1] - rel[:, 1] * d[0]) / denom
    L = np.hypot(e[:, 0], e[:, 1])
    ok = (np.abs(denom) > 1e-15) & (s > 1e-12) & (u * L >= -CORNER_TOL) & ((u - 1) * L <= CORNER_TOL)
    if skip is not None:
        ok[skip] = False
    if not ok.any():
        return np.inf, -1, False
    k = int(np.argmin(np.where(ok, s, np.inf)))
    near_end = (u[k] * L[k] <= CORNER_TOL) or ((1 - u[k]) * L[k] <= CORNER_TOL)
    at_corner = False
    if near_end:
        nb = (k - 1) % len(a) if u[k] * L[k] <= CORNER_TOL else (k + 1) % len(a)
        cross = e[k, 0] * e[nb, 1] - e[k, 1] * e[nb, 0]
        at_corner = abs(cross) > 1e-12 * L[k] * L[nb]
    return float(s[k]), k, at_corner


def trace_ray(domain: Domain, ray: RayState, target=None, t_max: float = 10.0, record_path: bool = True,
              rtol: float = 1e-10) -> TraceResult:
    """Follow a generalized geodesic from ``ray`` until it enters ``target`` or reaches t_max.

    The returned direction keeps |p| = c(x).  A ray meeting a corner stops there.
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    p = np.asarray(ray.p, dtype=float)
    if not np.all(np.isfinite(p)) or np.hypot(*p) == 0:
        raise ValueError("degenerate ray direction")
    rects = _target_rects(target)
    if domain.speed.is_constant:
        return _trace_straight(domain, ray, rects, t_max, record_path)
    return _trace_hamiltonian(domain, ray, rects, t_max, record_path, rtol)


def _trace_straight(domain, ray, rects, t_max, record_path):
    c = domain.speed.c_max
    x = ray.x.astype(float).copy()
    d = ray.p / np.hypot(*ray.p)
    t0 = float(ray.t)
    t = t0
    _, normals = domain.edges()
    events: list[ReflectionEvent] = []
    path = [x.copy()]
    skip = None
    hit = None
    corner = False
    while True:
        s_wall, k, at_corner = _first_wall(domain, x, d, skip)
        s_left = (t0 + t_max - t) * c
        s = min(s_wall, s_left)
        if rects is not None:
            sh = _slab_hits(rects, x[None], d[None], np.array([s]))[0]
            if np.isfinite(sh):
                hit = t + sh / c
                x = x + sh * d
                t = hit
                break
        x = x + s * d
        t = t + s / c
        if s_left <= s_wall:
            t = t0 + t_max
            break
        if at_corner:
            corner = True
            break
        n = normals[k]
        d_new = d - 2 * (d @ n) * n
        events.append(ReflectionEvent(x.copy(), t, d * c, d_new * c))
        if record_path:
            path.append(x.copy())
        d = d_new
        skip = k
    path.append(x.copy())
    trapped = rects is not None and hit is None and not corner
    return TraceResult(hit, events, trapped, corner, RayState(x, d * c, t), np.array(path))


def _ham_rhs(speed, y):
    x, xi = y[:2], y[2:]
    c = float(speed.value(x[0], x[1]))
    gx, gy = speed.grad(x[0], x[1])
    g = np.array([float(gx), float(gy)])
    return np.concatenate([c * c * xi, -(xi @ xi) * c * g])


def _rk4(speed, y, dt):
    k1 = _ham_rhs(speed, y)
    k2 = _ham_rhs(speed, y + 0.5 * dt * k1)
    k3 = _ham_rhs(speed, y + 0.5 * dt * k2)
    k4 = _ham_rhs(speed, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _normalize(speed, y):
    c = float(speed.value(y[0], y[1]))
    xi = y[2:] / (c * np.hypot(*y[2:]))
    return np.concatenate([y[:2], xi])


def _trace_hamiltonian(domain, ray, rects, t_max, record_path, rtol, dt_max=0.02):
    speed = domain.speed
    c0 = float(speed.value(*ray.x))
    y = _normalize(speed, np.concatenate([ray.x, ray.p / c0**2]))
    t0 = float(ray.t)
    t = t0
    dt = dt_max
    _, normals = domain.edges()
    events: list[ReflectionEvent] = []
    path = [y[:2].copy()]
    hit = None
    corner = False
    if rects is not None and _inside_rects(rects, y[:2]):
        hit = t
    while hit is None and t < t0 + t_max - 1e-14:
        dt = min(dt, t0 + t_max - t)
        full = _rk4(speed, y, dt)
        half = _rk4(speed, _rk4(speed, y, dt / 2), dt / 2)
        err = np.abs(full - half).max()
        if err > rtol and dt > 1e-8:
            dt *= 0.5
            continue
        y_new = _normalize(speed, half)
        reflected = False
        if not domain.contains(y_new[0], y_new[1]):
            lo, hi = 0.0, dt
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                ym = _rk4(speed, _rk4(speed, y, mid / 2), mid / 2)
                if domain.contains(ym[0], ym[1]):
                    lo = mid
                else:
                    hi = mid
            dt = hi
            y_new = _normalize(speed, _rk4(speed, _rk4(speed, y, dt / 2), dt / 2))
            reflected = True
        if rects is not None:
            chord = y_new[:2] - y[:2]
            sh = _slab_hits(rects, y[None, :2], chord[None], np.array([1.0]))[0]
            if np.isfinite(sh):
                hit = t + sh * dt
                y = np.concatenate([y[:2] + sh * chord, y_new[2:]])
                t = hit
                break
        y, t = y_new, t + dt
        if reflected:
            a = domain.vertices
            e = np.roll(a, -1, axis=0) - a
            L = np.hypot(e[:, 0], e[:, 1])
            rel = y[:2] - a
            u = np.clip((rel * e).sum(1) / L**2, 0, 1)
            dist = np.hypot(*(a + u[:, None] * e - y[:2]).T)
            near = np.flatnonzero(dist <= dist.min() + 1e-9)
            if len(near) > 1 and np.ptp(normals[near], axis=0).max() > 1e-9:
                corner = True
                break
            k = near[0]
            xp = a[k] + u[k] * e[k]
            n = normals[k]
            xi = y[2:]
            xi_new = xi - 2 * (xi @ n) * n
            c = float(speed.value(*xp))
            events.append(ReflectionEvent(xp.copy(), t, xi * c * c, xi_new * c * c))
            y = _normalize(speed, np.concatenate([xp, xi_new]))
            if record_path:
                path.append(y[:2].copy())
        elif record_path and len(path) < 100000:
            path.append(y[:2].copy())
        dt = min(dt * 2, dt_max)
    c = float(speed.value(*y[:2]))
    path.append(y[:2].copy())
    trapped = rects is not None and hit is None and not corner
    return TraceResult(hit, events, trapped, corner, RayState(y[:2], y[2:] * c * c, t), np.array(path))


# ---------------------------------------------------------------------------
# sampled GCC certification


@dataclass(frozen=True)
class Sampler:
    """Position lattice x direction fan, plus adversarial rays."""

    n_pos: int = 32
    n_dir: int = 64
    adversarial: bool = True
    graze: float = 1e-7

    def rays(self, domain: Domain) -> tuple[np.ndarray, np.ndarray]:
        x0, x1, y0, y1 = domain.bbox
        u = (np.arange(self.n_pos) + 0.5) / self.n_pos
        X, Y = np.meshgrid(x0 + u * (x1 - x0), y0 + u * (y1 - y0), indexing="ij")
        P = np.stack([X.ravel(), Y.ravel()], axis=1)
        P = P[domain.contains(P[:, 0], P[:, 1])]
        ang = 2 * np.pi * np.arange(self.n_dir) / self.n_dir
        Dd = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        pos = np.repeat(P, len(Dd), axis=0)
        dirs = np.tile(Dd, (len(P), 1))
        if self.adversarial:
            ap, ad = self._adversarial(domain)
            pos = np.concatenate([pos, ap])
            dirs = np.concatenate([dirs, ad])
        return pos, dirs

    def _adversarial(self, domain):
        x0, x1, y0, y1 = domain.bbox
        cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        u = (np.arange(self.n_pos) + 0.5) / self.n_pos
        xs, ys = x0 + u * (x1 - x0), y0 + u * (y1 - y0)
        pos, dirs = [], []
        axes = [(1, 0), (-1, 0), (0, 1), (0, -1)]
        for x in xs:  # vertical and horizontal rays through the centre lines
            for dvec in axes:
                pos.append((x, cy))
                dirs.append(dvec)
        for y in ys:
            for dvec in axes:
                pos.append((cx, y))
                dirs.append(dvec)
        diag = np.array([(1, 1), (1, -1), (-1, 1), (-1, -1)]) / np.sqrt(2)
        for t in u:  # diagonal rays along both diagonals
            for dvec in diag:
                pos.append((x0 + t * (x1 - x0), y0 + t * (y1 - y0)))
                dirs.append(dvec)
                pos.append((x0 + t * (x1 - x0), y1 - t * (y1 - y0)))
                dirs.append(dvec)
        g = self.graze
        for t in u:  # boundary-grazing rays just inside each side of the box
            for p, dvec in (((x0 + t * (x1 - x0), y0 + g), (1, 0)), ((x0 + t * (x1 - x0), y1 - g), (-1, 0)),
                            ((x0 + g, y0 + t * (y1 - y0)), (0, 1)), ((x1 - g, y0 + t * (y1 - y0)), (0, -1))):
                pos.append(p)
                dirs.append(dvec)
                pos.append(p)
                dirs.append((-dvec[0], -dvec[1]))
        pos, dirs = np.array(pos, float), np.array(dirs, float)
        keep = domain.contains(pos[:, 0], pos[:, 1])
        return pos[keep], dirs[keep]


@dataclass
class GccReport:
    samples: int
    hit_fraction: float
    T_hat: float
    worst_ray: tuple
    trapped: np.ndarray  # (n, 4): x, y, dx, dy
    corner_terminated: int
    T: float
    label: str = "sampled certification"

    @property
    def passed(self) -> bool:
        # corner-terminated rays are a measure-zero set; they are reported, not certified
        return self.samples > self.corner_terminated and len(self.trapped) == 0

    def summary(self) -> dict:
        return {
            "label": self.label, "T": self.T, "samples": self.samples, "hit_fraction": self.hit_fraction,
            "T_hat": self.T_hat, "worst_ray": [float(v) for v in self.worst_ray], "trapped": int(len(self.trapped)),
            "corner_terminated": self.corner_terminated, "passed": self.passed,
        }


def _batch_rect(bbox, pos, dirs, T, rects, retro_corners=False):
    """Vectorised straight billiard in an axis-aligned box; returns first-hit times and corner flags.

    With ``retro_corners`` a ray meeting a corner is sent straight back, which is
    the limit of the reflections of nearby rays for a right-angle corner.
    """
    x0, x1, y0, y1 = bbox
    n = len(pos)
    x = pos.copy()
    d = dirs / np.hypot(dirs[:, 0], dirs[:, 1])[:, None]
    t = np.zeros(n)
    hit = np.full(n, np.nan)
    corner = np.zeros(n, dtype=bool)
    alive = np.ones(n, dtype=bool)
    while alive.any():
        idx = np.flatnonzero(alive)
        xa, da, ta = x[idx], d[idx], t[idx]
        with np.errstate(divide="ignore", invalid="ignore"):
            tx = np.where(da[:, 0] > 0, (x1 - xa[:, 0]) / da[:, 0], np.where(da[:, 0] < 0, (x0 - xa[:, 0]) / da[:, 0], np.inf))
            ty = np.where(da[:, 1] > 0, (y1 - xa[:, 1]) / da[:, 1], np.where(da[:, 1] < 0, (y0 - xa[:, 1]) / da[:, 1], np.inf))
        tx, ty = np.maximum(tx, 0.0), np.maximum(ty, 0.0)
        left = T - ta
        s = np.minimum(np.minimum(tx, ty), left)
        sh = _slab_hits(rects, xa, da, s)
        got = np.isfinite(sh)
        hit[idx[got]] = ta[got] + sh[got]
        alive[idx[got]] = False
        rest = ~got
        idx, xa, da, s, tx, ty, left = idx[rest], xa[rest], da[rest], s[rest], tx[rest], ty[rest], left[rest]
        xa = xa + s[:, None] * da
        t[idx] += s
        done = s >= left
        wx = (np.abs(tx - s) <= 1e-12) & ~done
        wy = (np.abs(ty - s) <= 1e-12) & ~done
        cor = wx & wy
        corner[idx[cor]] = True
        stop = done | cor if not retro_corners else done
        alive[idx[stop]] = False
        xa[wx, 0] = np.where(da[wx, 0] > 0, x1, x0)
        xa[wy, 1] = np.where(da[wy, 1] > 0, y1, y0)
        da[wx, 0] *= -1
        da[wy, 1] *= -1
        x[idx], d[idx] = xa, da
    return hit, corner


def check_gcc(domain: Domain, omega: ControlRegion, T: float, sampler: Sampler | None = None,
              corner_policy: str = "terminate") -> GccReport:
    """Trace every sampled ray for time T and report which ones meet omega.

    Rays stopped at a corner are counted separately and left out of the hit
    fraction.  ``corner_policy="retro"`` instead reflects them straight back
    (rectangles only), so every sampled ray gets a verdict.
    """
    if corner_policy not in ("terminate", "retro"):
        raise ValueError(f"unknown corner policy {corner_policy!r}")
    if T <= 0:
        raise ValueError("T must be positive")
    sampler = sampler or Sampler()
    pos, dirs = sampler.rays(domain)
    rects = _target_rects(omega)
    if domain.kind == "rectangle" and domain.speed.is_constant:
        c = domain.speed.c_max
        retro = corner_policy == "retro"
        hit, corner = _batch_rect(domain.bbox, pos, dirs, T * c, rects, retro)
        hit = hit / c
        if retro:
            corner[:] = False
    else:
        hit = np.full(len(pos), np.nan)
        corner = np.zeros(len(pos), dtype=bool)
        c = domain.speed.value(pos[:, 0], pos[:, 1])
        for k in range(len(pos)):
            r = trace_ray(domain, RayState(pos[k], dirs[k] * c[k]), rects, T, record_path=False)
            hit[k] = np.nan if r.first_hit_time is None else r.first_hit_time
            corner[k] = r.terminated_at_corner
    ok = np.isfinite(hit)
    miss = ~ok & ~corner
    counted = ~corner
    trapped = np.concatenate([pos[miss], dirs[miss]], axis=1)
    if ok.any():
        T_hat = float(np.nanmax(hit))
        w = int(np.nanargmax(np.where(ok, hit, -np.inf)))
    else:
        T_hat = float("nan")
        w = 0
    if miss.any():
        w = int(np.flatnonzero(miss)[0])
    worst = tuple(np.concatenate([pos[w], dirs[w]]).tolist()) if len(pos) else ()
    return GccReport(len(pos), float(ok[counted].mean()) if counted.any() else 0.0, T_hat, worst, trapped, int(corner.sum()), float(T))


# ---------------------------------------------------------------------------
# potential-based conditions


def _points_for(grid: Grid, cells: np.ndarray | None) -> np.ndarray:
    if cells is None:
        return grid.sample_points()
    cells = grid.check_mask(cells).astype(bool) & grid.inside
    X, Y = grid.centers()
    return np.concatenate([np.stack([X[cells], Y[cells]], axis=1), _cell_nodes(grid, cells)])


@dataclass
class PotentialTime:
    T: float
    valid: bool
    per_chart: list[float]
    min_gradient: float


def gcc_time_from_potential(d, grid: Grid) -> PotentialTime:
    """T = 2 max |grad d|_g.

    For a multi-chart potential each chart counts over its own closed support
    without cutoff; for a decomposition pass a list of (potential, cell mask).
    """
    if isinstance(d, EscapePotential) and len(d.charts) > 1 and all(ch.support is not None for ch in d.charts):
        items = []
        for ch in d.charts:
            single = EscapePotential((type(ch)(ch.kind, ch.center, ch.axis, ch.offset, ch.scale),), grid)
            X, Y = grid.corners_of_cells()
            nodes = np.stack([X.ravel(), Y.ravel()], axis=1)
            C = np.stack([a.ravel() for a in grid.centers()], axis=1)
            pts = np.concatenate([nodes, C])
            items.append((single, pts[ch.support.contains(pts)]))
    elif isinstance(d, EscapePotential):
        items = [(d, grid.sample_points())]
    else:
        items = [(pot, _points_for(grid, mask)) for pot, mask in d]
    per, gmin = [], np.inf
    for pot, pts in items:
        _, gnorm, _, _ = pot.metric(pts, check_domain=False)
        per.append(2.0 * float(gnorm.max()))
        gmin = min(gmin, float(gnorm.min()))
    return PotentialTime(max(per), bool(gmin > 0), per, gmin)


@dataclass
class RayConditionReport:
    passed: bool
    gradient_ok: bool
    hessian_ok: bool
    boundary_ok: bool
    max_gradient: float
    min_hessian: float
    offending_segments: np.ndarray

    def summary(self) -> dict:
        return {
            "passed": self.passed, "gradient_ok": self.gradient_ok, "hessian_ok": self.hessian_ok,
            "boundary_ok": self.boundary_ok, "max_gradient": self.max_gradient, "min_hessian": self.min_hessian,
            "offending_segments": int(len(self.offending_segments)),
        }


def _bulk(d: EscapePotential, grid: Grid, T: float, tol: float, cells):
    pts = _points_for(grid, cells)
    _, gnorm, lam, _ = d.metric(pts, check_domain=False)
    gmax, lmin = float(gnorm.max()), float(lam.min())
    return gmax, lmin, gmax <= T / 2, lmin >= 1 - tol


def _normal_dots(d: EscapePotential, grid: Grid) -> np.ndarray:
    mids = grid.segments.midpoint
    _, _, _, g = d.metric(mids, check_domain=False)
    c = grid.domain.speed.value(mids[:, 0], mids[:, 1])
    return c * (g * grid.segments.normal).sum(1)


def check_escape_potential_condition(d: EscapePotential, gamma: np.ndarray, T: float, grid: Grid, tol: float = 1e-9,
                                     cells=None) -> RayConditionReport:
    """|grad d|_g <= T/2, Hessian >= 1 - tol, and every outflow segment lies in gamma."""
    gmax, lmin, gok, hok = _bulk(d, grid, T, tol, cells)
    gamma = np.asarray(gamma, dtype=bool)
    out = (_normal_dots(d, grid) > tol) & ~gamma
    if cells is not None:
        out &= grid.segment_cells_mask(cells)
    bad = np.flatnonzero(out)
    bok = len(bad) == 0
    return RayConditionReport(gok and hok and bok, gok, hok, bok, gmax, lmin, bad)


def check_obstacle_condition(d: EscapePotential, gamma0: np.ndarray, T: float, grid: Grid, tol: float = 1e-9,
                             cells=None) -> RayConditionReport:
    """Gradient and Hessian bounds plus <grad d, nu> <= tol on every segment of gamma0."""
    gmax, lmin, gok, hok = _bulk(d, grid, T, tol, cells)
    gamma0 = np.asarray(gamma0, dtype=bool)
    bad = np.flatnonzero(gamma0 & (_normal_dots(d, grid) > tol))
    bok = len(bad) == 0
    return RayConditionReport(gok and hok and bok, gok, hok, bok, gmax, lmin, bad)


def unfolded_position(x0, d, t, bbox=(0.0, 1.0, 0.0, 1.0)) -> np.ndarray:
    """Closed-form billiard position in a box: move straight, then fold back (triangle wave)."""
    x0 = np.asarray(x0, dtype=float)
    d = np.asarray(d, dtype=float)
    t = np.asarray(t, dtype=float)[..., None]
    lo = np.array([bbox[0], bbox[2]])
    L = np.array([bbox[1] - bbox[0], bbox[3] - bbox[2]])
    z = (x0 - lo + d * t) / L
    z = np.mod(z, 2.0)
    z = np.where(z > 1.0, 2.0 - z, z)
    return lo + z * L
