"""Gridded virtual-obstacle environment and link geometry.

Grid convention: axis 0 of every ``M1 x M2`` array indexes the world x
direction and axis 1 the world y direction.  Cell ``(i, j)`` covers
``[x0 + i*cs, x0 + (i+1)*cs] x [y0 + j*cs, y0 + (j+1)*cs]`` where
``(x0, y0)`` is the grid origin and ``cs`` the cell size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from numba import njit

class GeometryError(ValueError):
    """Invalid geometric input."""


class EmptyTraceError(GeometryError):
    """The ground segment of a link does not cross the grid."""


class LineOfSightError(GeometryError):
    """A diffraction path was requested for a line-of-sight link."""


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    cell_size: float
    origin: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise GeometryError(f"grid must have at least one cell, got {self.rows}x{self.cols}")
        if not (self.cell_size > 0 and np.isfinite(self.cell_size)):
            raise GeometryError(f"cell_size must be positive, got {self.cell_size}")
        object.__setattr__(self, "rows", int(self.rows))
        object.__setattr__(self, "cols", int(self.cols))
        object.__setattr__(self, "cell_size", float(self.cell_size))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def extent(self) -> Tuple[float, float]:
        return (self.rows * self.cell_size, self.cols * self.cell_size)

    @property
    def center(self) -> np.ndarray:
        return np.array(self.origin) + 0.5 * np.array(self.extent)

    def cell_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """World coordinates of all cell centers as two ``M1 x M2`` arrays."""
        xs = self.origin[0] + (np.arange(self.rows) + 0.5) * self.cell_size
        ys = self.origin[1] + (np.arange(self.cols) + 0.5) * self.cell_size
        return np.meshgrid(xs, ys, indexing="ij")

    def to_cell_units(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return (xy - np.array(self.origin)) / self.cell_size


@dataclass(frozen=True, eq=False)
class ObstacleMap:
    grid: GridSpec
    heights: np.ndarray

    def __post_init__(self):
        h = np.array(self.heights, dtype=float)
        if h.shape != self.grid.shape:
            raise GeometryError(f"heights shape {h.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(h)):
            raise GeometryError("heights must be finite")
        if np.any(h < 0):
            raise GeometryError("heights must be nonnegative")
        h.setflags(write=False)
        object.__setattr__(self, "heights", h)

    @classmethod
    def flat(cls, grid: GridSpec, height: float = 0.0) -> "ObstacleMap":
        return cls(grid, np.full(grid.shape, float(height)))

    def with_heights(self, heights) -> "ObstacleMap":
        return ObstacleMap(self.grid, heights)


@dataclass(frozen=True, eq=False)
class Link:
    tx: np.ndarray
    rx: np.ndarray

    def __post_init__(self):
        tx = np.array(self.tx, dtype=float).reshape(3)
        rx = np.array(self.rx, dtype=float).reshape(3)
        if not (np.all(np.isfinite(tx)) and np.all(np.isfinite(rx))):
            raise GeometryError("link endpoints must be finite")
        if tx[2] < 0 or rx[2] < 0:
            raise GeometryError("endpoint altitudes must be nonnegative")
        if np.hypot(*(tx[:2] - rx[:2])) == 0.0:
            raise GeometryError("TX and RX ground projections coincide")
        object.__setattr__(self, "tx", tx)
        object.__setattr__(self, "rx", rx)

    @property
    def ground_distance(self) -> float:
        return float(np.hypot(*(self.tx[:2] - self.rx[:2])))

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(self.tx - self.rx))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.tx, self.rx])


@dataclass(frozen=True, eq=False)
class CellTrace:
    """Cells crossed by the ground segment, ordered from the TX.

    ``s`` is the ground distance from the TX ground point to the projection
    of each cell center onto the segment (clamped to ``[0, D]``) and ``z``
    the direct-line altitude there.
    """

    rows: np.ndarray
    cols: np.ndarray
    s: np.ndarray
    z: np.ndarray
    centers: np.ndarray
    ground_distance: float
    grid: GridSpec

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def flat_index(self) -> np.ndarray:
        return self.rows * self.grid.cols + self.cols


@dataclass(frozen=True, eq=False)
class LineFeature:
    values: np.ndarray
    traced: np.ndarray


@dataclass(frozen=True, eq=False)
class EllipseMask:
    mask: np.ndarray
    eccentricity: float


@dataclass(frozen=True, eq=False)
class DiffractionPath:
    """Knife-edge chain from TX to RX.

    ``s`` and ``heights`` hold all vertices including the two endpoints, so
    there are ``N + 2`` of them for ``N`` edges.  ``d`` has ``N + 1`` entries
    and ``theta`` has ``N``.
    """

    s: np.ndarray
    heights: np.ndarray
    xy: np.ndarray
    cells: np.ndarray
    d: np.ndarray
    theta: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.theta)

    @property
    def curve_length(self) -> float:
        return float(np.sum(np.hypot(self.d, np.diff(self.heights))))

    def height_sensitivities(self) -> Tuple[np.ndarray, np.ndarray]:
        """Derivatives of the curve length (N,) and edge angles (N, N) with
        respect to the edge-top heights, vertex positions held fixed."""
        vh = np.asarray(self.heights, dtype=float)
        d = np.asarray(self.d, dtype=float)
        n = len(vh)
        dz = np.diff(vh)
        seg = np.hypot(d, dz)
        dcurve = np.zeros(n)
        dcurve[:-1] -= dz / seg
        dcurve[1:] += dz / seg
        # e_j = arctan((vh_j - vh_{j+1}) / d_j); theta = e[1:] - e[:-1]
        k = d / (d ** 2 + dz ** 2)
        de = np.zeros((n - 1, n))
        idx = np.arange(n - 1)
        de[idx, idx] = k
        de[idx, idx + 1] = -k
        dtheta = de[1:] - de[:-1]
        return dcurve[1:-1], dtheta[:, 1:-1]

    @classmethod
    def from_geometry(cls, d, theta) -> "DiffractionPath":
        """Bare path carrying only distances and angles (no grid vertices)."""
        d = np.asarray(d, dtype=float).ravel()
        theta = np.asarray(theta, dtype=float).ravel()
        if len(d) != len(theta) + 1:
            raise GeometryError("need exactly one more distance than angles")
        if np.any(d <= 0):
            raise GeometryError("distances must be positive")
        s = np.concatenate([[0.0], np.cumsum(d)])
        # a profile realizing these turning angles, symmetric about level
        elevation = np.sum(theta) / 2 - np.concatenate([[0.0], np.cumsum(theta)])
        heights = np.concatenate([[0.0], np.cumsum(d * np.tan(elevation))])
        return cls(s, heights, np.column_stack([s, np.zeros_like(s)]),
                   np.full(len(theta), -1), d, theta)


HeightsLike = Union[ObstacleMap, np.ndarray]


def _heights(H: HeightsLike) -> np.ndarray:
    return H.heights if isinstance(H, ObstacleMap) else np.asarray(H, dtype=float)


def _clip_to_box(p, q, hi):
    """Liang-Barsky clip of segment p->q against [0, hi0] x [0, hi1] (closed)."""
    t0, t1 = 0.0, 1.0
    delta = q - p
    for k in range(2):
        for pk, qk in ((-delta[k], p[k]), (delta[k], hi[k] - p[k])):
            if pk == 0.0:
                if qk < 0.0:
                    return None
            else:
                r = qk / pk
                if pk < 0.0:
                    t0 = max(t0, r)
                else:
                    t1 = min(t1, r)
    if t0 > t1:
        return None
    return t0, t1


def _supercover(p: np.ndarray, q: np.ndarray, shape) -> Tuple[np.ndarray, np.ndarray]:
    """All cells (closed unit squares) touched by segment p->q, in cell units."""
    clip = _clip_to_box(p, q, np.array(shape, dtype=float))
    if clip is None:
        return np.empty(0, int), np.empty(0, int)
    t0, t1 = clip
    a = p + t0 * (q - p)
    b = p + t1 * (q - p)
    du, dv = b - a
    m1, m2 = shape
    if du == 0.0:
        u = a[0]
        cand = [int(np.floor(u))]
        if u == np.floor(u):
            cand.append(int(u) - 1)
        i = np.array([c for c in cand if 0 <= c < m1], dtype=int)
        vlo = np.full(len(i), min(a[1], b[1]))
        vhi = np.full(len(i), max(a[1], b[1]))
    else:
        ulo, uhi = min(a[0], b[0]), max(a[0], b[0])
        i = np.arange(max(int(np.ceil(ulo)) - 1, 0), min(int(np.floor(uhi)), m1 - 1) + 1)
        # segment restricted to each column strip [i, i+1]
        ua = np.maximum(i, ulo)
        ub = np.minimum(i + 1, uhi)
        va = a[1] + (ua - a[0]) * dv / du
        vb = a[1] + (ub - a[0]) * dv / du
        vlo, vhi = np.minimum(va, vb), np.maximum(va, vb)
    jlo = np.maximum(np.ceil(vlo).astype(int) - 1, 0)
    jhi = np.minimum(np.floor(vhi).astype(int), m2 - 1)
    counts = np.maximum(jhi - jlo + 1, 0)
    rows = np.repeat(i, counts)
    starts = np.repeat(jlo - np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
    cols = np.arange(counts.sum()) + starts
    return rows, cols


def trace_cells(link: Link, grid: GridSpec) -> CellTrace:
    """Supercover of the link's ground segment over ``grid``.

    Raises:
        EmptyTraceError: if the segment misses the grid entirely.
    """
    p = grid.to_cell_units(link.tx[:2])
    q = grid.to_cell_units(link.rx[:2])
    rows, cols = _supercover(p, q, grid.shape)
    if len(rows) == 0:
        raise EmptyTraceError("link ground segment lies entirely outside the grid")
    D = link.ground_distance
    cs = grid.cell_size
    centers = np.column_stack([grid.origin[0] + (rows + 0.5) * cs,
                               grid.origin[1] + (cols + 0.5) * cs])
    d0 = (link.rx[0] - link.tx[0]) / D
    d1 = (link.rx[1] - link.tx[1]) / D
    s = np.clip((centers[:, 0] - link.tx[0]) * d0 + (centers[:, 1] - link.tx[1]) * d1, 0.0, D)
    order = np.lexsort((rows * grid.cols + cols, s))
    rows, cols, s, centers = rows[order], cols[order], s[order], centers[order]
    z = link.tx[2] + (link.rx[2] - link.tx[2]) * (s / D)
    return CellTrace(rows, cols, s, z, centers, D, grid)


def line_feature(link: Link, grid: GridSpec) -> LineFeature:
    tr = trace_cells(link, grid)
    values = np.zeros(grid.shape)
    traced = np.zeros(grid.shape, dtype=bool)
    values[tr.rows, tr.cols] = tr.z
    traced[tr.rows, tr.cols] = True
    return LineFeature(values, traced)


def ellipse_mask(link: Link, grid: GridSpec, e: float) -> EllipseMask:
    """Cells whose centers lie in the ellipse with foci at the ground points.

    The focal distance is the ground distance ``d0`` so the semi-major axis
    is ``d0 / (2 e)``; boundary points count as inside.
    """
    if not 0.0 < e < 1.0:
        raise GeometryError(f"eccentricity must be in (0, 1), got {e}")
    X, Y = grid.cell_centers()
    return EllipseMask(inside_ellipse(link, X, Y, e).astype(float), float(e))


def inside_ellipse(link: Link, X: np.ndarray, Y: np.ndarray, e: float) -> np.ndarray:
    """Elementwise ellipse test for points ``(X, Y)``; see :func:`ellipse_mask`."""
    focal_sum = (np.hypot(X - link.tx[0], Y - link.tx[1])
                 + np.hypot(X - link.rx[0], Y - link.rx[1]))
    return focal_sum <= link.ground_distance / e


def _check_shapes(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise GeometryError(f"shape mismatch: {a.shape} vs {b.shape}")


def focus_line(H: HeightsLike, L: Union[LineFeature, np.ndarray]) -> np.ndarray:
    """Obstruction feature ``ReLU((H - L) * sign(L))`` with ``sign(x) = [x > 0]``."""
    h = _heights(H)
    lv = L.values if isinstance(L, LineFeature) else np.asarray(L, dtype=float)
    _check_shapes(h, lv)
    return np.maximum((h - lv) * (lv > 0), 0.0)


def focus_ellipse(H: HeightsLike, M: Union[EllipseMask, np.ndarray]) -> np.ndarray:
    h = _heights(H)
    m = M.mask if isinstance(M, EllipseMask) else np.asarray(M, dtype=float)
    _check_shapes(h, m)
    return h * m


def soft_los_indicator(O_L) -> float:
    """``1 - tanh(sum(O_L))``; equals 1 exactly when nothing obstructs."""
    return float(1.0 - np.tanh(np.sum(O_L)))


def hard_los(link: Link, H: ObstacleMap, trace: Optional[CellTrace] = None) -> bool:
    """True iff every traced obstacle is strictly below the direct line."""
    tr = trace if trace is not None else trace_cells(link, H.grid)
    h = H.heights[tr.rows, tr.cols]
    return bool(np.all(h < tr.z))


def _select_vertices(s: np.ndarray, h: np.ndarray, D: float, z_tx: float, z_rx: float):
    """Elevation-angle vertex selection over a profile; returns profile indices.

    Starting from the TX, repeatedly pick the later point whose segment from
    the current base has the smallest depression angle
    ``arctan((h_base - h_j) / (s_j - s_base))``; ties go to the farthest point.
    The RX closes the chain.  This is the upper convex hull of the profile.
    """
    sj = np.append(s, D)
    hj = np.append(h, z_rx)
    rx_index = len(s)
    chosen = []
    base_s, base_h = 0.0, z_tx
    lo = 0
    while True:
        ahead = np.flatnonzero(sj[lo:] > base_s) + lo
        phi = np.arctan((base_h - hj[ahead]) / (sj[ahead] - base_s))
        best = ahead[np.flatnonzero(phi == phi.min())[-1]]
        if best == rx_index:
            return chosen
        chosen.append(best)
        base_s, base_h = sj[best], hj[best]
        lo = best + 1


def extract_diffraction_path(link: Link, H: ObstacleMap,
                             trace: Optional[CellTrace] = None) -> DiffractionPath:
    """Knife edges of the shortest concave curve over the traced obstacles.

    Only obstacle tops strictly between the endpoints (``0 < s < D``) can be
    edges.  When the only blockers touch the direct line exactly, the farthest
    touching top becomes a single grazing edge.  A link blocked only by the
    columns enclosing an endpoint yields a path with no edges.

    Raises:
        LineOfSightError: if the link is not blocked.
    """
    tr = trace if trace is not None else trace_cells(link, H.grid)
    h_all = H.heights[tr.rows, tr.cols]
    if np.all(h_all < tr.z):
        raise LineOfSightError("link is line-of-sight; no diffraction path")
    return path_from_profile(tr.s, h_all, tr.z, tr.flat_index, link.tx, link.rx)


def path_from_profile(s_all, h_all, z_all, cells, tx, rx) -> DiffractionPath:
    """Diffraction path from an already traced, blocked height profile."""
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    D = float(np.hypot(*(rx[:2] - tx[:2])))
    z_tx, z_rx = tx[2], rx[2]
    interior = np.flatnonzero((s_all > 0.0) & (s_all < D))
    s, h, z = s_all[interior], h_all[interior], z_all[interior]
    picks = _select_vertices(s, h, D, z_tx, z_rx)
    if not picks:
        touching = np.flatnonzero(h >= z)
        if len(touching):
            picks = [touching[np.argmax(s[touching])]]
    picks = np.asarray(picks, dtype=int)
    vs = np.concatenate([[0.0], s[picks], [D]])
    vh = np.concatenate([[z_tx], h[picks], [z_rx]])
    direction = (rx[:2] - tx[:2]) / D
    xy = tx[:2] + vs[:, None] * direction
    d = np.diff(vs)
    # turning angle at each edge: incoming minus outgoing elevation
    theta = (np.arctan((vh[1:-1] - vh[2:]) / d[1:])
             - np.arctan((vh[:-2] - vh[1:-1]) / d[:-1]))
    return DiffractionPath(vs, vh, xy, np.asarray(cells)[interior][picks], d, theta)


@dataclass(frozen=True, eq=False)
class TraceBatch:
    """Concatenated cell traces for many links (CSR layout).

    Entries ``indptr[k]:indptr[k+1]`` belong to link ``k``; ``cells`` are
    flat (row-major) cell indices.
    """

    links: np.ndarray  # (n, 6): tx xyz, rx xyz
    indptr: np.ndarray
    cells: np.ndarray
    s: np.ndarray
    z: np.ndarray
    grid: GridSpec

    def __len__(self) -> int:
        return len(self.links)

    @property
    def owner(self) -> np.ndarray:
        """Link index of every entry."""
        return np.repeat(np.arange(len(self)), np.diff(self.indptr))

    def span(self, k: int) -> slice:
        return slice(int(self.indptr[k]), int(self.indptr[k + 1]))

    def obstruction_sum(self, heights: np.ndarray) -> np.ndarray:
        """Per link ``sum(ReLU(h - L) [L > 0])`` over its traced cells."""
        h = np.asarray(heights, dtype=float).ravel()[self.cells]
        vals = np.where(self.z > 0, np.maximum(h - self.z, 0.0), 0.0)
        return np.add.reduceat(vals, self.indptr[:-1])

    def blocked(self, heights: np.ndarray) -> np.ndarray:
        """Per link: some traced obstacle reaches the direct line."""
        h = np.asarray(heights, dtype=float).ravel()[self.cells]
        return np.maximum.reduceat(h - self.z, self.indptr[:-1]) >= 0.0

    def profile(self, k: int, heights: np.ndarray):
        sl = self.span(k)
        h = np.asarray(heights, dtype=float).ravel()[self.cells[sl]]
        return self.s[sl], h, self.z[sl], self.cells[sl]

    def diffraction_path(self, k: int, heights: np.ndarray) -> DiffractionPath:
        s, h, z, cells = self.profile(k, heights)
        return path_from_profile(s, h, z, cells, self.links[k, :3], self.links[k, 3:])


def links_to_array(links) -> np.ndarray:
    if isinstance(links, np.ndarray):
        arr = np.asarray(links, dtype=float)
    else:
        arr = np.array([lk.as_array() for lk in links], dtype=float).reshape(-1, 6)
    if arr.ndim != 2 or arr.shape[1] != 6:
        raise GeometryError("links must have shape (n, 6)")
    return arr


def trace_batch(links, grid: GridSpec) -> TraceBatch:
    """Trace every link; ``links`` is a sequence of Link or an (n, 6) array.

    Compiled equivalent of calling :func:`trace_cells` per link (same cells,
    order and floating-point values).
    """
    arr = links_to_array(links)
    if not len(arr):
        return TraceBatch(arr, np.zeros(1, np.int64), np.empty(0, np.int64), np.empty(0),
                          np.empty(0), grid)
    if not np.all(np.isfinite(arr)):
        raise GeometryError("link endpoints must be finite")
    if np.any(arr[:, 2] < 0) or np.any(arr[:, 5] < 0):
        raise GeometryError("endpoint altitudes must be nonnegative")
    if np.any(np.hypot(arr[:, 0] - arr[:, 3], arr[:, 1] - arr[:, 4]) == 0.0):
        raise GeometryError("TX and RX ground projections coincide")
    counts = _count_batch(arr, grid.origin[0], grid.origin[1], grid.cell_size,
                          grid.rows, grid.cols)
    if np.any(counts == 0):
        raise EmptyTraceError("link ground segment lies entirely outside the grid")
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    cells, s, z = _fill_batch(arr, indptr, grid.origin[0], grid.origin[1], grid.cell_size,
                              grid.rows, grid.cols)
    return TraceBatch(arr, indptr, cells, s, z, grid)


@njit(cache=True)
def _clip_scalar(p0, p1, q0, q1, hi0, hi1):
    t0, t1 = 0.0, 1.0
    for k in range(4):
        if k == 0:
            pk, qk = -(q0 - p0), p0
        elif k == 1:
            pk, qk = q0 - p0, hi0 - p0
        elif k == 2:
            pk, qk = -(q1 - p1), p1
        else:
            pk, qk = q1 - p1, hi1 - p1
        if pk == 0.0:
            if qk < 0.0:
                return False, 0.0, 0.0
        else:
            r = qk / pk
            if pk < 0.0:
                t0 = max(t0, r)
            else:
                t1 = min(t1, r)
    return t0 <= t1, t0, t1


@njit(cache=True)
def _cover(row, x0, y0, cs, m1, m2, rows, cols):
    """Supercover of one link written into ``rows``/``cols`` (if large
    enough); returns the cell count.  Mirrors :func:`_supercover`."""
    p0, p1 = (row[0] - x0) / cs, (row[1] - y0) / cs
    q0, q1 = (row[3] - x0) / cs, (row[4] - y0) / cs
    ok, t0, t1 = _clip_scalar(p0, p1, q0, q1, float(m1), float(m2))
    if not ok:
        return 0
    a0, a1 = p0 + t0 * (q0 - p0), p1 + t0 * (q1 - p1)
    b0, b1 = p0 + t1 * (q0 - p0), p1 + t1 * (q1 - p1)
    du, dv = b0 - a0, b1 - a1
    n = 0
    store = len(rows) > 0
    if du == 0.0:
        u = a0
        vlo, vhi = min(a1, b1), max(a1, b1)
        jlo = max(int(np.ceil(vlo)) - 1, 0)
        jhi = min(int(np.floor(vhi)), m2 - 1)
        for c in (int(np.floor(u)), int(u) - 1):
            if c == int(u) - 1 and u != np.floor(u):
                continue
            if 0 <= c < m1:
                for j in range(jlo, jhi + 1):
                    if store:
                        rows[n] = c
                        cols[n] = j
                    n += 1
        return n
    ulo, uhi = min(a0, b0), max(a0, b0)
    for i in range(max(int(np.ceil(ulo)) - 1, 0), min(int(np.floor(uhi)), m1 - 1) + 1):
        ua = max(float(i), ulo)
        ub = min(float(i + 1), uhi)
        va = a1 + (ua - a0) * dv / du
        vb = a1 + (ub - a0) * dv / du
        vlo, vhi = min(va, vb), max(va, vb)
        jlo = max(int(np.ceil(vlo)) - 1, 0)
        jhi = min(int(np.floor(vhi)), m2 - 1)
        for j in range(jlo, jhi + 1):
            if store:
                rows[n] = i
                cols[n] = j
            n += 1
    return n


@njit(cache=True)
def _count_batch(arr, x0, y0, cs, m1, m2):
    out = np.zeros(len(arr), np.int64)
    empty = np.empty(0, np.int64)
    for k in range(len(arr)):
        out[k] = _cover(arr[k], x0, y0, cs, m1, m2, empty, empty)
    return out


@njit(cache=True)
def _fill_batch(arr, indptr, x0, y0, cs, m1, m2):
    total = indptr[-1]
    cells = np.empty(total, np.int64)
    s_out = np.empty(total)
    z_out = np.empty(total)
    for k in range(len(arr)):
        row = arr[k]
        lo, hi = indptr[k], indptr[k + 1]
        n = hi - lo
        rows = np.empty(n, np.int64)
        cols = np.empty(n, np.int64)
        _cover(row, x0, y0, cs, m1, m2, rows, cols)
        D = np.hypot(row[0] - row[3], row[1] - row[4])
        d0 = (row[3] - row[0]) / D
        d1 = (row[4] - row[1]) / D
        s = np.empty(n)
        flat = np.empty(n, np.int64)
        for t in range(n):
            cx = x0 + (rows[t] + 0.5) * cs
            cy = y0 + (cols[t] + 0.5) * cs
            v = (cx - row[0]) * d0 + (cy - row[1]) * d1
            s[t] = min(max(v, 0.0), D)
            flat[t] = rows[t] * m2 + cols[t]
        order = np.argsort(flat, kind="mergesort")
        order = order[np.argsort(s[order], kind="mergesort")]
        for t in range(n):
            o = order[t]
            cells[lo + t] = flat[o]
            s_out[lo + t] = s[o]
            z_out[lo + t] = row[2] + (row[5] - row[2]) * (s[o] / D)
    return cells, s_out, z_out
