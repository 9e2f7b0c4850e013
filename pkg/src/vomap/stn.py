"""Rotation/scale normalized local scatter features.

The ellipse-focused obstacle map is resampled so that the TX-RX ground
segment lands centered and horizontal in the output, spanning its full
width.  Coordinates follow the spatial-transformer convention: each axis
of the source and target maps is normalized to ``[-1, 1]``, with pixel
centers at ``(2 i + 1) / M - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .geometry import GridSpec, Link, ObstacleMap, inside_ellipse

# bump when the pooled feature set changes; stored with fitted models
POOLED_FEATURES_VERSION = 1
POOLED_FEATURE_NAMES = ("mean", "max", "nonzero_fraction",
                        "q00_mean", "q01_mean", "q10_mean", "q11_mean")


@dataclass(frozen=True)
class AffineParams:
    dx: float
    dy: float
    c1: float
    c2: float
    omega: float

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError("scale factors must be positive")

    @classmethod
    def identity(cls) -> "AffineParams":
        return cls(0.0, 0.0, 1.0, 1.0, 0.0)


def stn_params(link: Link, grid: GridSpec) -> AffineParams:
    """Translation, scale and rotation that normalize the link's ground segment.

    Positions are converted to cell units relative to the grid origin.  The
    rotation angle is ``-arctan(dy/dx)`` (minus pi when the TX lies at smaller
    x than the RX), where ``(dx, dy)`` points from RX to TX; it therefore
    lies in ``(-3 pi / 2, pi / 2]``.
    """
    pt = grid.to_cell_units(link.tx[:2])
    pr = grid.to_cell_units(link.rx[:2])
    m1, m2 = grid.shape
    d0 = float(np.hypot(*(pt - pr)))
    if d0 == 0.0:
        raise ValueError("TX and RX ground points coincide")
    dx, dy = pt - pr
    omega = -math.atan(dy / dx) if dx != 0 else -math.copysign(math.pi / 2, dy)
    if dx < 0:
        omega -= math.pi
    return AffineParams(
        dx=float((pt[0] + pr[0] - m1) / m1),
        dy=float((pt[1] + pr[1] - m2) / m2),
        c1=d0 / m1,
        c2=d0 / m2,
        omega=float(omega),
    )


def _snap(v: float) -> float:
    # exact zeros/ones at right angles keep axis-aligned resampling exact
    r = round(v)
    return float(r) if abs(v - r) < 1e-12 else v


def source_coordinates(params: AffineParams, in_shape: Tuple[int, int],
                       out_shape: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """Fractional source pixel indices (0-based) for every output pixel.

    The displayed rotation ``[[cos w, -sin w], [sin w, cos w]]`` is written
    for a right-handed frame; ``omega`` from :func:`stn_params` is measured
    in the opposite sense (it is minus the segment heading), so the heading
    enters here as ``-omega``.  Scale factors multiply the source axes, which
    keeps the mapping a similarity in world units on non-square grids and is
    identical to the displayed form when ``M1 == M2``.
    """
    m1, m2 = in_shape
    p1, p2 = out_shape
    cos_h = _snap(math.cos(-params.omega))
    sin_h = _snap(math.sin(-params.omega))
    # target pixel centers as odd integers k, so x_t = k / P; the map to a
    # 0-based source index u = (M/2) x_s + (M-1)/2 is folded in so that the
    # identity transform involves only exact half-integer arithmetic
    kx = (2 * np.arange(p1) + 1 - p1).astype(float)[:, None]
    ky = (2 * np.arange(p2) + 1 - p2).astype(float)[None, :]
    a1, b1 = params.c1 * m1 / p1, params.c1 * m1 / p2
    a2, b2 = params.c2 * m2 / p1, params.c2 * m2 / p2
    u = 0.5 * (a1 * cos_h * kx - b1 * sin_h * ky) + 0.5 * (m1 * params.dx + m1 - 1)
    v = 0.5 * (a2 * sin_h * kx + b2 * cos_h * ky) + 0.5 * (m2 * params.dy + m2 - 1)
    return u, v


def sample_bilinear(O_E: np.ndarray, params: AffineParams,
                    out: Optional[Sequence[int] | GridSpec] = None) -> np.ndarray:
    """Resample ``O_E`` with weights ``max(0, 1-|x-n|) max(0, 1-|y-m|)``.

    Source points with no in-range neighbors produce 0.  ``out`` sets the
    output size (a shape or a GridSpec); it defaults to the input size.
    """
    O_E = np.asarray(O_E, dtype=float)
    out_shape = _out_shape(O_E.shape, out)
    u, v = source_coordinates(params, O_E.shape, out_shape)
    return _bilinear_gather(O_E, u, v)


def _neighbors(u: np.ndarray, v: np.ndarray, shape):
    """Flattened 4-neighbor indices and bilinear weights (0 when out of range)."""
    m1, m2 = shape
    u0 = np.floor(u)
    v0 = np.floor(v)
    fu = (u - u0).ravel()
    fv = (v - v0).ravel()
    u0 = u0.astype(int).ravel()
    v0 = v0.astype(int).ravel()
    iu = np.stack([u0, u0, u0 + 1, u0 + 1])
    iv = np.stack([v0, v0 + 1, v0, v0 + 1])
    w = np.stack([(1.0 - fu) * (1.0 - fv), (1.0 - fu) * fv, fu * (1.0 - fv), fu * fv])
    ok = (iu >= 0) & (iu < m1) & (iv >= 0) & (iv < m2)
    w = np.where(ok, w, 0.0)
    iu = np.where(ok, iu, 0)
    iv = np.where(ok, iv, 0)
    return iu, iv, w


def _combine(w, vals, shape):
    # fixed summation order over the four neighbors
    out = w[0] * vals[0]
    for k in range(1, 4):
        out = out + w[k] * vals[k]
    return out.reshape(shape)


def _bilinear_gather(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    iu, iv, w = _neighbors(u, v, img.shape)
    return _combine(w, img[iu, iv], u.shape)


def _out_shape(in_shape, out):
    if out is None:
        return tuple(in_shape)
    if isinstance(out, GridSpec):
        return out.shape
    return (int(out[0]), int(out[1]))


def scatter_features(link: Link, H: ObstacleMap, e: float,
                     out: Optional[Sequence[int] | GridSpec] = None) -> np.ndarray:
    """STN-resampled ellipse-focused obstacle map for one link.

    Same values as ``sample_bilinear(focus_ellipse(H, ellipse_mask(...)),
    stn_params(...))``, but the ellipse is only tested at sampled neighbors.
    """
    if not 0.0 < e < 1.0:
        raise ValueError(f"eccentricity must be in (0, 1), got {e}")
    grid = H.grid
    out_shape = _out_shape(grid.shape, out)
    u, v = source_coordinates(stn_params(link, grid), grid.shape, out_shape)
    iu, iv, w = _neighbors(u, v, grid.shape)
    cs = grid.cell_size
    X = grid.origin[0] + (iu + 0.5) * cs
    Y = grid.origin[1] + (iv + 0.5) * cs
    vals = np.where(inside_ellipse(link, X, Y, e), H.heights[iu, iv], 0.0)
    return _combine(w, vals, out_shape)


def pooled_features(F: np.ndarray) -> np.ndarray:
    """Fixed pooling: mean, max, nonzero fraction and the four quadrant means."""
    F = np.asarray(F, dtype=float)
    r, c = F.shape[0] // 2, F.shape[1] // 2
    out = np.empty(len(POOLED_FEATURE_NAMES))
    out[0] = F.mean()
    out[1] = F.max()
    out[2] = np.count_nonzero(F) / F.size
    for k, q in enumerate((F[:r, :c], F[:r, c:], F[r:, :c], F[r:, c:])):
        out[3 + k] = q.mean() if q.size else 0.0
    return out


@dataclass(frozen=True, eq=False)
class ScatterRegressor:
    """Maps a feature map to a scatter loss term in dB.

    ``kind="null"`` always predicts 0.  ``kind="linear"`` is a weight vector
    over :func:`pooled_features`.  ``feature_shape`` is the STN output size
    (``None`` keeps the obstacle grid size).
    """

    kind: str = "null"
    weights: np.ndarray = field(default_factory=lambda: np.zeros(len(POOLED_FEATURE_NAMES)))
    feature_shape: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        if self.kind not in ("null", "linear"):
            raise ValueError(f"unknown regressor kind {self.kind!r}")
        w = np.array(self.weights, dtype=float).ravel()
        if w.shape != (len(POOLED_FEATURE_NAMES),):
            raise ValueError(f"expected {len(POOLED_FEATURE_NAMES)} weights, got {w.shape}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.feature_shape is not None:
            object.__setattr__(self, "feature_shape", tuple(int(k) for k in self.feature_shape))

    @classmethod
    def null(cls) -> "ScatterRegressor":
        return cls("null")

    @property
    def is_null(self) -> bool:
        return self.kind == "null"


def scatter_predict(F: np.ndarray, r: ScatterRegressor) -> float:
    if r.is_null:
        return 0.0
    F = np.asarray(F, dtype=float)
    if r.feature_shape is not None and F.shape != r.feature_shape:
        raise ValueError(f"feature map shape {F.shape} does not match regressor {r.feature_shape}")
    return float(r.weights @ pooled_features(F))
