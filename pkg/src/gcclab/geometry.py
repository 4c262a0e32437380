"""Domains, uniform grids, boundary segments, measures and the Dirichlet eigenvalue.

The metric is conformal, g = c^-2 (Euclidean), so a single positive speed field
carries all of the geometry.  Grids are cell centred with square cells of side
h = 1/resolution.  Field arrays have shape (nx, ny) and are indexed [i, j] with
i along x.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class GeometryError(ValueError):
    """Invalid geometric input."""


class NotConverged(RuntimeError):
    """An iterative solve hit its iteration cap."""


@dataclass(frozen=True)
class SpeedField:
    """Wave speed c(x) with its gradient and declared bounds."""

    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]
    c_min: float
    c_max: float
    name: str = "custom"

    @staticmethod
    def constant(c: float = 1.0) -> "SpeedField":
        def value(x, y):
            return np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, float(c))

        def grad(x, y):
            z = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
            return z, z.copy()

        return SpeedField(value, grad, float(c), float(c), name=f"constant({c:g})")

    @staticmethod
    def gaussian_bump(amplitude: float, center=(0.5, 0.5), width: float = 0.2) -> "SpeedField":
        """c = 1 + A exp(-|x - x0|^2 / (2 w^2)); needs A > -1."""
        if amplitude <= -1.0:
            raise GeometryError("speed must stay positive: amplitude > -1 required")
        cx, cy = center

        def value(x, y):
            r2 = (np.asarray(x) - cx) ** 2 + (np.asarray(y) - cy) ** 2
            return 1.0 + amplitude * np.exp(-r2 / (2 * width**2))

        def grad(x, y):
            dx = np.asarray(x) - cx
            dy = np.asarray(y) - cy
            e = amplitude * np.exp(-(dx**2 + dy**2) / (2 * width**2)) / width**2
            return -dx * e, -dy * e

        lo, hi = sorted((1.0, 1.0 + amplitude))
        return SpeedField(value, grad, lo, hi, name=f"bump({amplitude:g})")

    @property
    def is_constant(self) -> bool:
        return self.c_min == self.c_max


@dataclass(frozen=True)
class Domain:
    """Rectangle [0, w] x [0, h] or a simple counterclockwise polygon."""

    vertices: np.ndarray
    kind: str
    speed: SpeedField = field(default_factory=SpeedField.constant)

    @staticmethod
    def rectangle(width: float = 1.0, height: float = 1.0, speed: SpeedField | None = None) -> "Domain":
        if width <= 0 or height <= 0:
            raise GeometryError("rectangle sides must be positive")
        v = np.array([[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]])
        return Domain(v, "rectangle", speed or SpeedField.constant())

    @staticmethod
    def unit_square(speed: SpeedField | None = None) -> "Domain":
        return Domain.rectangle(1.0, 1.0, speed)

    @staticmethod
    def polygon(vertices, speed: SpeedField | None = None) -> "Domain":
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("polygon needs at least 3 vertices given as (x, y) pairs")
        bad = _self_intersections(v)
        if bad:
            i, j = bad[0]
            raise GeometryError(f"polygon is not simple: edge {i} intersects edge {j}")
        if _signed_area(v) == 0.0:
            raise GeometryError("polygon has zero area")
        if _signed_area(v) < 0:
            v = v[::-1].copy()
        return Domain(v, "polygon", speed or SpeedField.constant())

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])

    @property
    def perimeter(self) -> float:
        e = np.roll(self.vertices, -1, axis=0) - self.vertices
        return float(np.hypot(e[:, 0], e[:, 1]).sum())

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)

    @property
    def diameter(self) -> float:
        v = self.vertices
        d = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Edge start points and outward unit normals."""
        a = self.vertices
        e = np.roll(a, -1, axis=0) - a
        n = np.stack([e[:, 1], -e[:, 0]], axis=1)
        return a, n / np.hypot(n[:, 0], n[:, 1])[:, None]

    def contains(self, x, y, tol: float = 0.0) -> np.ndarray:
        """Closed-domain membership test (crossing number, plus an edge tolerance)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "rectangle":
            x0, x1, y0, y1 = self.bbox
            return (x >= x0 - tol) & (x <= x1 + tol) & (y >= y0 - tol) & (y <= y1 + tol)
        v = self.vertices
        inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        for a, b in zip(v, np.roll(v, -1, axis=0)):
            cond = (a[1] > y) != (b[1] > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xc = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            inside ^= cond & (x < xc)
        if tol > 0:
            inside |= _distance_to_polygon(v, x, y) <= tol
        return inside


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))

    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    return any(
        o == 0 and on_seg(a, b, c)
        for o, a, b, c in ((o1, p1, p2, q1), (o2, p1, p2, q2), (o3, q1, q2, p1), (o4, q1, q2, p2))
    )


def _self_intersections(v: np.ndarray) -> list[tuple[int, int]]:
    n = len(v)
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                out.append((i, j))
    return out


def _distance_to_polygon(v, x, y):
    d = np.full(np.broadcast(x, y).shape, np.inf)
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        e = b - a
        t = np.clip(((x - a[0]) * e[0] + (y - a[1]) * e[1]) / (e @ e), 0.0, 1.0)
        d = np.minimum(d, np.hypot(x - a[0] - t * e[0], y - a[1] - t * e[1]))
    return d


@dataclass(frozen=True)
class BoundarySegments:
    """Boundary pieces listed edge by edge in counterclockwise order."""

    p0: np.ndarray  # (m, 2)
    p1: np.ndarray  # (m, 2)
    normal: np.ndarray  # (m, 2) outward unit normals
    cell: np.ndarray  # (m, 2) index of the adjacent interior cell
    edge: np.ndarray  # (m,) polygon edge id

    @property
    def length(self) -> np.ndarray:
        d = self.p1 - self.p0
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.p0 + self.p1)

    def __len__(self) -> int:
        return len(self.p0)


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform cell-centred grid over the bounding box of a domain."""

    domain: Domain
    resolution: int
    h: float
    nx: int
    ny: int
    origin: tuple[float, float]
    inside: np.ndarray  # (nx, ny) bool, cell centre inside the domain
    segments: BoundarySegments

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def xc(self) -> np.ndarray:
        return self.origin[0] + (np.arange(self.nx) + 0.5) * self.h

    @property
    def yc(self) -> np.ndarray:
        return self.origin[1] + (np.arange(self.ny) + 0.5) * self.h

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xc, self.yc, indexing="ij")

    def cell_box(self, i: int, j: int) -> tuple[float, float, float, float]:
        x0 = self.origin[0] + i * self.h
        y0 = self.origin[1] + j * self.h
        return x0, x0 + self.h, y0, y0 + self.h

    def corners_of_cells(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates, shape (nx+1, ny+1)."""
        xs = self.origin[0] + np.arange(self.nx + 1) * self.h
        ys = self.origin[1] + np.arange(self.ny + 1) * self.h
        return np.meshgrid(xs, ys, indexing="ij")

    def check_mask(self, mask: np.ndarray, what: str = "mask") -> np.ndarray:
        mask = np.asarray(mask)
        if mask.shape != self.shape:
            raise GeometryError(f"{what} shape {mask.shape} does not match grid {self.shape}")
        return mask

    def segment_cells_mask(self, cells: np.ndarray) -> np.ndarray:
        """Boundary segments whose adjacent cell lies in the cell mask."""
        c = self.segments.cell
        return np.asarray(cells, dtype=bool)[c[:, 0], c[:, 1]]

    def sample_points(self) -> np.ndarray:
        """Cell centres of the domain plus all boundary segment endpoints."""
        X, Y = self.centers()
        pts = np.stack([X[self.inside], Y[self.inside]], axis=1)
        return np.concatenate([pts, self.segments.p0, self.segments.p1[-1:]], axis=0)


def build_grid(domain: Domain, resolution: int) -> Grid:
    """Tile the bounding box with square cells of side 1/resolution."""
    if resolution < 8:
        raise GeometryError(f"resolution must be >= 8, got {resolution}")
    h = 1.0 / resolution
    x0, x1, y0, y1 = domain.bbox
    nx = int(round((x1 - x0) * resolution))
    ny = int(round((y1 - y0) * resolution))
    if nx < 1 or ny < 1:
        raise GeometryError("domain smaller than one cell")
    X, Y = np.meshgrid(x0 + (np.arange(nx) + 0.5) * h, y0 + (np.arange(ny) + 0.5) * h, indexing="ij")
    if domain.kind == "rectangle":
        inside = np.ones((nx, ny), dtype=bool)
    else:
        # a centre on the boundary carries the Dirichlet value, so it is not an unknown
        inside = domain.contains(X, Y) & (_distance_to_polygon(domain.vertices, X, Y) > 1e-9 * h)
    segs = _boundary_segments(domain, h, (x0, y0), inside)
    return Grid(domain, int(resolution), h, nx, ny, (x0, y0), inside, segs)


def _boundary_segments(domain: Domain, h: float, origin, inside) -> BoundarySegments:
    starts, normals = domain.edges()
    ends = np.roll(domain.vertices, -1, axis=0)
    nx, ny = inside.shape
    cand = np.argwhere(inside)
    p0s, p1s, ns, cells, eids = [], [], [], [], []
    for k, (a, b, n) in enumerate(zip(starts, ends, normals)):
        length = float(np.hypot(*(b - a)))
        m = max(1, int(np.ceil(length / h - 1e-9)))
        t = np.arange(m + 1) / m
        pts = a[None, :] + t[:, None] * (b - a)[None, :]
        # snap exact multiples of h so axis-aligned edges tile exactly
        pts = np.where(np.abs(pts / h - np.round(pts / h)) < 1e-9, np.round(pts / h) * h, pts)
        mid = 0.5 * (pts[:-1] + pts[1:]) - 0.5 * h * n[None, :]
        ij = np.floor((mid - np.asarray(origin)[None, :]) / h).astype(int)
        ij[:, 0] = np.clip(ij[:, 0], 0, nx - 1)
        ij[:, 1] = np.clip(ij[:, 1], 0, ny - 1)
        ok = inside[ij[:, 0], ij[:, 1]]
        for r in np.flatnonzero(~ok):
            cc = origin + (cand + 0.5) * h
            ij[r] = cand[np.argmin(((cc - mid[r]) ** 2).sum(1))]
        p0s.append(pts[:-1])
        p1s.append(pts[1:])
        ns.append(np.repeat(n[None, :], m, axis=0))
        cells.append(ij)
        eids.append(np.full(m, k))
    return BoundarySegments(
        np.concatenate(p0s), np.concatenate(p1s), np.concatenate(ns), np.concatenate(cells), np.concatenate(eids)
    )


@dataclass(frozen=True)
class MeasurePair:
    interior: float
    boundary: float

    @property
    def total(self) -> float:
        return self.interior + self.boundary

    def __add__(self, other: "MeasurePair") -> "MeasurePair":
        return MeasurePair(self.interior + other.interior, self.boundary + other.boundary)


def measure_masks(grid: Grid, cells: np.ndarray, boundary: np.ndarray | None = None) -> MeasurePair:
    """Area of the masked cells and length of the masked boundary segments."""
    cells = grid.check_mask(cells, "cell mask").astype(bool)
    if boundary is None:
        boundary = grid.segment_cells_mask(cells)
    boundary = np.asarray(boundary, dtype=bool)
    if boundary.shape != (len(grid.segments),):
        raise GeometryError(f"boundary mask length {boundary.shape} does not match {len(grid.segments)} segments")
    area = np.count_nonzero(cells & grid.inside) * grid.h**2
    return MeasurePair(float(area), float(grid.segments.length[boundary].sum()))


def measure(region, grid: Grid) -> MeasurePair:
    """Measure a ControlRegion (anything with .cells and .boundary masks)."""
    return measure_masks(grid, region.cells, region.boundary)


def boundary_normal(grid: Grid, point) -> np.ndarray:
    """Outward unit normal at a boundary point; corners get the normalised sum."""
    p = np.asarray(point, dtype=float)
    s = grid.segments
    tol = grid.h / 100.0
    d = s.p1 - s.p0
    t = np.clip(((p - s.p0) * d).sum(1) / (d * d).sum(1), 0.0, 1.0)
    dist = np.hypot(*(s.p0 + t[:, None] * d - p).T)
    near = dist <= tol
    if not near.any():
        raise GeometryError(f"point {tuple(p)} is not on the boundary (distance {dist.min():.3g} > h/100)")
    normals = np.unique(np.round(s.normal[near], 12), axis=0)
    n = normals.sum(axis=0)
    return n / np.linalg.norm(n)


# ---------------------------------------------------------------------------
# discrete operator


@dataclass(frozen=True, eq=False)
class FaceOperator:
    """Face differences D and weights w so that -L = D^T diag(w) D / h^2.

    Interior faces carry u_j - u_i.  Faces on the bounding box carry -2 u_i with
    weight 1/2 (antisymmetric ghost on the wall).  Faces to exterior cells of a
    polygon carry -u_i (the exterior cell centre holds u = 0).
    """

    D: sp.csr_matrix
    weight: np.ndarray
    owner: sp.csr_matrix  # cells x faces, splits each face density between its cells
    h: float

    @property
    def laplacian(self) -> sp.csr_matrix:
        return -(self.D.T @ sp.diags(self.weight) @ self.D).tocsr() / self.h**2

    def grad_density(self, u: np.ndarray) -> np.ndarray:
        """Cellwise |grad u|^2 (c^2 weighted); summing times h^2 gives ||grad u||^2."""
        du = self.D @ u
        return self.owner @ (self.weight[:, None] * du**2 if du.ndim == 2 else self.weight * du**2) / self.h**2


def face_operator(grid: Grid) -> FaceOperator:
    nx, ny, h = grid.nx, grid.ny, grid.h
    inside = grid.inside
    idx = np.arange(nx * ny).reshape(nx, ny)
    X, Y = grid.centers()
    c2 = grid.domain.speed.value(X, Y) ** 2
    rows, cols, vals, w, own_r, own_c, own_v = [], [], [], [], [], [], []
    f = 0

    def add_face(entries, weight, owners):
        nonlocal f
        m = len(weight)
        fr = np.arange(f, f + m)
        for cell_idx, coef in entries:
            rows.append(fr)
            cols.append(cell_idx)
            vals.append(np.full(m, coef))
        for cell_idx, share in owners:
            own_r.append(cell_idx)
            own_c.append(fr)
            own_v.append(np.full(m, share))
        w.append(weight)
        f += m

    # interior faces along x and y
    for axis in (0, 1):
        a = (slice(None, -1), slice(None)) if axis == 0 else (slice(None), slice(None, -1))
        b = (slice(1, None), slice(None)) if axis == 0 else (slice(None), slice(1, None))
        both = inside[a] & inside[b]
        ia, ib = idx[a][both], idx[b][both]
        add_face([(ia, -1.0), (ib, 1.0)], 0.5 * (c2[a][both] + c2[b][both]), [(ia, 0.5), (ib, 0.5)])
        # faces between an inside cell and an exterior cell
        for src, dst in ((a, b), (b, a)):
            one = inside[src] & ~inside[dst]
            ii = idx[src][one]
            add_face([(ii, -1.0)], c2[src][one], [(ii, 1.0)])
    # faces on the bounding box
    for sl in ((0, slice(None)), (-1, slice(None)), (slice(None), 0), (slice(None), -1)):
        on = inside[sl]
        ii = idx[sl][on]
        add_face([(ii, -2.0)], 0.5 * c2[sl][on], [(ii, 1.0)])
    nf = f
    N = nx * ny
    D = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nf, N))
    owner = sp.csr_matrix((np.concatenate(own_v), (np.concatenate(own_r), np.concatenate(own_c))), shape=(N, nf))
    return FaceOperator(D, np.concatenate(w), owner, h)


def dirichlet_laplacian(grid: Grid) -> sp.csr_matrix:
    """5-point div(c^2 grad) with homogeneous Dirichlet data, on the full cell vector."""
    return face_operator(grid).laplacian


def first_dirichlet_eigenvalue(
    grid: Grid, tol: float = 1e-8, max_iter: int = 500, mask: np.ndarray | None = None, return_vector: bool = False
):
    """Smallest eigenvalue of -L by inverse power iteration.

    With ``mask`` the problem is restricted to a sub-region (Dirichlet on its
    complement), which is how domain monotonicity is checked.
    """
    active = grid.inside if mask is None else (grid.check_mask(mask).astype(bool) & grid.inside)
    n_active = int(active.sum())
    if n_active < 9:
        raise GeometryError(f"need at least 9 interior cells, got {n_active}")
    if mask is None:
        A = -dirichlet_laplacian(grid)
    else:
        sub = Grid(grid.domain, grid.resolution, grid.h, grid.nx, grid.ny, grid.origin, active, grid.segments)
        A = -dirichlet_laplacian(sub)
    keep = np.flatnonzero(active.ravel())
    A = A[keep][:, keep].tocsc()
    lu = spla.splu(A)
    x = np.ones(len(keep))
    x /= np.linalg.norm(x)
    lam = float(x @ (A @ x))
    res = np.inf
    for _ in range(max_iter):
        y = lu.solve(x)
        x = y / np.linalg.norm(y)
        Ax = A @ x
        lam = float(x @ Ax)
        res = float(np.linalg.norm(Ax - lam * x) / abs(lam))
        if res < tol:
            break
    else:
        raise NotConverged(f"inverse iteration did not converge in {max_iter} steps (residual {res:.3e})")
    if return_vector:
        v = np.zeros(grid.nx * grid.ny)
        v[keep] = x
        return lam, v.reshape(grid.shape)
    return lam
