"""Map-guided placement of a UAV relay between two ground users.

A relay position is feasible when it has line of sight to both users.  The
guided search works on the vertical plane that perpendicularly bisects the
users' ground segment: descend while feasible, and when a step down loses
feasibility, look along the circle (in that plane) through the blocked
point centered on the users' midpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .geometry import GridSpec, Link, ObstacleMap, hard_los, trace_batch
from .propagation import RadioMapModel, predict_batch


class RelayError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class RelayQuery:
    p1: np.ndarray
    p2: np.ndarray
    z_min: float = 10.0
    z_max: float = 150.0
    step_v: Optional[float] = None        # defaults to the grid cell size
    step_h: Optional[float] = None
    angle_step_deg: float = 5.0
    fixed_altitude: float = 50.0          # height of the 2-D exhaustive scan
    max_moves: int = 10_000

    def __post_init__(self):
        p1 = np.array(self.p1, dtype=float).reshape(3)
        p2 = np.array(self.p2, dtype=float).reshape(3)
        if np.hypot(*(p1[:2] - p2[:2])) == 0:
            raise RelayError("users must have distinct ground positions")
        if not 0 <= self.z_min <= self.z_max:
            raise RelayError("need 0 <= z_min <= z_max")
        for name in ("step_v", "step_h"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise RelayError(f"{name} must be positive")
        if not 0 < self.angle_step_deg <= 180:
            raise RelayError("angle_step_deg must lie in (0, 180]")
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "p2", p2)

    def steps(self, grid: GridSpec) -> Tuple[float, float]:
        return (self.step_v or grid.cell_size, self.step_h or grid.cell_size)


@dataclass(frozen=True, eq=False)
class RelayResult:
    position: np.ndarray
    min_gain: float          # attenuation (dB) of the worse of the two links
    search_distance: float   # meters
    double_los: bool
    evaluated: int = 0       # feasibility checks performed

    @property
    def channel_gain_db(self) -> float:
        """Worse-link channel gain as a negative dB value."""
        return -self.min_gain


def _links(p: np.ndarray, q: RelayQuery) -> Tuple[Link, Link]:
    return Link(p, q.p1), Link(p, q.p2)


def double_los(p, q: RelayQuery, H: ObstacleMap) -> bool:
    p = np.asarray(p, dtype=float)
    a, b = _links(p, q)
    return hard_los(a, H) and hard_los(b, H)


def worse_attenuation(p, q: RelayQuery, model: RadioMapModel) -> float:
    a, b = _links(np.asarray(p, dtype=float), q)
    return float(predict_batch([a, b], model).max())


def _plane(q: RelayQuery):
    """Origin (users' midpoint) and in-plane horizontal unit vector."""
    o = 0.5 * (q.p1 + q.p2)
    g = q.p2[:2] - q.p1[:2]
    n = np.array([-g[1], g[0]]) / np.hypot(*g)
    return o, n


def _point(o, n, u: float, z: float) -> np.ndarray:
    return np.array([o[0] + u * n[0], o[1] + u * n[1], z])


def place_relay(q: RelayQuery, model: RadioMapModel) -> RelayResult:
    """Descend-then-circle search on the users' bisector plane.

    Starts above the midpoint at ``z_max`` (if that point is blocked, the
    circle scan below is applied to it first).  While the point one vertical
    step below (clamped at ``z_min``) is feasible, move there.  Otherwise
    scan the circle centered on the midpoint through that blocked point in
    angular steps of ``angle_step_deg``, alternating sides; the first
    feasible point in altitude bounds becomes the new position.  The search
    ends at ``z_min`` or when the circle has no feasible point.
    ``search_distance`` sums the straight moves between accepted points.
    """
    H = model.H
    step_v, _ = q.steps(H.grid)
    o, n = _plane(q)
    checks = 0

    def feasible(u, z):
        nonlocal checks
        checks += 1
        return double_los(_point(o, n, u, z), q, H)

    dtheta = math.radians(q.angle_step_deg)

    def circle(bu, bz):
        # circle through the blocked point, centered at the midpoint
        r = math.hypot(bu, bz - o[2])
        phi0 = math.atan2(bz - o[2], bu)
        for k in range(1, int(math.pi / dtheta) + 1):
            for sgn in (1, -1):
                phi = phi0 + sgn * k * dtheta
                cu, cz = r * math.cos(phi), o[2] + r * math.sin(phi)
                if q.z_min <= cz <= q.z_max and feasible(cu, cz):
                    return cu, cz
        return None

    u, z = 0.0, float(q.z_max)
    dist = 0.0
    if not feasible(u, z):
        hit = circle(u, z)
        if hit is None:
            raise RelayError("no double-LOS point on the starting circle above the midpoint")
        dist += math.hypot(hit[0] - u, hit[1] - z)
        u, z = hit
    for _ in range(q.max_moves):
        if z <= q.z_min:
            break
        z_next = max(z - step_v, q.z_min)
        if feasible(u, z_next):
            dist += z - z_next
            z = z_next
            continue
        hit = circle(u, z_next)
        if hit is None:
            break
        dist += math.hypot(hit[0] - u, hit[1] - z)
        u, z = hit
    pos = _point(o, n, u, z)
    return RelayResult(pos, worse_attenuation(pos, q, model), dist, True, checks)


def _lattice(q: RelayQuery, grid: GridSpec, mode: str):
    step_v, step_h = q.steps(grid)
    x0, y0 = grid.origin
    ex, ey = grid.extent
    xs = np.arange(x0 + step_h / 2, x0 + ex, step_h)
    ys = np.arange(y0 + step_h / 2, y0 + ey, step_h)
    if mode == "2D":
        zs = np.array([float(q.fixed_altitude)])
    elif mode == "3D":
        zs = np.arange(q.z_min, q.z_max + 1e-9, step_v)
    else:
        raise RelayError("mode must be '2D' or '3D'")
    return xs, ys, zs


def serpentine(xs, ys, zs) -> np.ndarray:
    """Lattice points in boustrophedon order (x fastest, then y, then z)."""
    pts = []
    flip_y = False
    for k, z in enumerate(zs):
        yy = ys[::-1] if flip_y else ys
        for j, y in enumerate(yy):
            xx = xs[::-1] if (j + k * len(ys)) % 2 else xs
            pts.append(np.column_stack([xx, np.full(len(xx), y), np.full(len(xx), z)]))
        flip_y = not flip_y
    return np.vstack(pts)


def exhaustive_search(q: RelayQuery, model: RadioMapModel, mode: str = "3D") -> RelayResult:
    """Scan a lattice (cell-centered in x/y; ``z_min..z_max`` or the fixed
    2-D altitude) and keep the feasible point with the lowest worse-link
    attenuation.  ``search_distance`` is the serpentine path through the
    whole lattice."""
    H = model.H
    xs, ys, zs = _lattice(q, H.grid, mode)
    pts = serpentine(xs, ys, zs)
    path_len = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
    ok = _double_los_many(pts, q, H)
    if not ok.any():
        raise RelayError("no double-LOS point on the search lattice")
    cand = pts[ok]
    att = np.maximum(_atten_many(cand, q.p1, model), _atten_many(cand, q.p2, model))
    best = int(np.argmin(att))
    return RelayResult(cand[best], float(att[best]), path_len, True, len(pts))


def _double_los_many(pts: np.ndarray, q: RelayQuery, H: ObstacleMap) -> np.ndarray:
    ok = np.ones(len(pts), dtype=bool)
    for user in (q.p1, q.p2):
        valid = np.hypot(*(pts[:, :2] - user[:2]).T) > 0
        arr = np.column_stack([pts[valid], np.tile(user, (valid.sum(), 1))])
        blocked = trace_batch(arr, H.grid).blocked(H.heights)
        sub = np.zeros(len(pts), dtype=bool)
        sub[valid] = ~blocked
        ok &= sub
    return ok


def _atten_many(pts: np.ndarray, user: np.ndarray, model: RadioMapModel) -> np.ndarray:
    arr = np.column_stack([pts, np.tile(user, (len(pts), 1))])
    return predict_batch(arr, model)
