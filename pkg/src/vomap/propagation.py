"""Radio-map forward model, synthetic measurements and error metrics.

Attenuation of a link is ``I * los + (1 - I) * (diffraction + scatter)``
where ``I`` is the line-of-sight indicator (hard 0/1 or the soft
``1 - tanh(sum O_L)``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .diffraction import VoglerConfig, vogler_attenuation
from .geometry import (DiffractionPath, Link, ObstacleMap, TraceBatch,
                       links_to_array, trace_batch)
from .stn import ScatterRegressor, scatter_features

NMAE_DEFINITION = "sum(|y - yhat|) / sum(|y|)"
INDICATOR_MODES = ("hard", "soft")


class PropagationError(ValueError):
    pass


@dataclass(frozen=True)
class PathLossParams:
    beta0: float
    gamma0: float

    def __post_init__(self):
        if not (math.isfinite(self.beta0) and math.isfinite(self.gamma0)):
            raise PropagationError("path-loss parameters must be finite")
        if not self.gamma0 > 0:
            raise PropagationError(f"gamma0 must be positive, got {self.gamma0}")


@dataclass(frozen=True, eq=False)
class RadioMapModel:
    H: ObstacleMap
    los: PathLossParams
    vogler: VoglerConfig = field(default_factory=VoglerConfig)
    scatter: ScatterRegressor = field(default_factory=ScatterRegressor.null)
    eccentricity: float = 0.8
    indicator_mode: str = "hard"

    def __post_init__(self):
        if not 0 < self.eccentricity < 1:
            raise PropagationError("eccentricity must lie in (0, 1)")
        if self.indicator_mode not in INDICATOR_MODES:
            raise PropagationError(f"indicator_mode must be one of {INDICATOR_MODES}")

    def replace(self, **kw) -> "RadioMapModel":
        from dataclasses import replace
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class Measurement:
    link: Link
    y: float

    def __post_init__(self):
        if not math.isfinite(self.y):
            raise PropagationError("measurement value must be finite")
        object.__setattr__(self, "y", float(self.y))


@dataclass(frozen=True)
class Metrics:
    mae: float
    nmae: float
    count: int

    def as_dict(self) -> dict:
        return {"mae": self.mae, "nmae": self.nmae, "count": self.count,
                "nmae_definition": NMAE_DEFINITION}


@dataclass(frozen=True)
class SamplingConfig:
    """Where synthetic TX/RX positions are drawn.

    Ground positions are uniform over the grid extent.  With ``outdoor_rx``
    receivers only land on cells lower than ``rx_height``; transmitters are
    always kept above the obstacle under them.
    """

    tx_altitude: Tuple[float, float] = (50.0, 200.0)
    rx_height: float = 1.5
    outdoor_rx: bool = True
    max_rounds: int = 100

    def __post_init__(self):
        lo, hi = self.tx_altitude
        if not 0 <= lo <= hi:
            raise PropagationError("tx_altitude must satisfy 0 <= low <= high")
        if self.rx_height < 0:
            raise PropagationError("rx_height must be nonnegative")


def los_gain(link: Link, p: PathLossParams) -> float:
    d = link.distance
    if d == 0:
        raise PropagationError("zero link distance")
    return p.beta0 + p.gamma0 * math.log10(d)


def _los_batch(links: np.ndarray, p: PathLossParams) -> np.ndarray:
    d = np.linalg.norm(links[:, :3] - links[:, 3:], axis=1)
    return p.beta0 + p.gamma0 * np.log10(d)


def indicator(batch: TraceBatch, heights: np.ndarray, mode: str) -> np.ndarray:
    if mode == "hard":
        return (~batch.blocked(heights)).astype(float)
    return 1.0 - np.tanh(batch.obstruction_sum(heights))


class VoglerCache:
    """Memo of Vogler excess loss keyed by the exact edge geometry."""

    def __init__(self, cfg: VoglerConfig):
        self.cfg = cfg
        self._store: Dict[bytes, float] = {}

    def excess_db(self, path: DiffractionPath) -> float:
        if path.n_edges == 0:
            return 0.0
        key = path.d.tobytes() + path.theta.tobytes()
        val = self._store.get(key)
        if val is None:
            val = vogler_attenuation(path, self.cfg).excess_loss_db
            self._store[key] = val
        return val


@dataclass(frozen=True, eq=False)
class NlosTerms:
    """Per-link pieces of the non-line-of-sight branch.

    ``log_curve`` is ``log10`` of the diffraction curve length, ``excess`` the
    Vogler excess loss and ``pooled`` the pooled scatter features (zeros when
    not computed).  Rows without a path are left at 0.
    """

    log_curve: np.ndarray
    excess: np.ndarray
    pooled: Optional[np.ndarray]
    has_path: np.ndarray


def nlos_terms(batch: TraceBatch, H: ObstacleMap, which: np.ndarray, cfg: VoglerConfig,
               cache: Optional[VoglerCache] = None, eccentricity: Optional[float] = None,
               feature_shape=None) -> NlosTerms:
    """Diffraction (and optionally scatter) inputs for the links in ``which``.

    Links in ``which`` must be hard-blocked under ``H``.  Pass
    ``eccentricity`` to also compute pooled scatter features.
    """
    from .stn import POOLED_FEATURE_NAMES, pooled_features
    n = len(batch)
    cache = cache or VoglerCache(cfg)
    log_curve = np.zeros(n)
    excess = np.zeros(n)
    has_path = np.zeros(n, dtype=bool)
    pooled = np.zeros((n, len(POOLED_FEATURE_NAMES))) if eccentricity is not None else None
    for k in np.flatnonzero(which):
        path = batch.diffraction_path(int(k), H.heights)
        log_curve[k] = math.log10(path.curve_length)
        excess[k] = cache.excess_db(path)
        has_path[k] = True
        if pooled is not None:
            link = Link(batch.links[k, :3], batch.links[k, 3:])
            pooled[k] = pooled_features(scatter_features(link, H, eccentricity, feature_shape))
    return NlosTerms(log_curve, excess, pooled, has_path)


def predict_batch(links, model: RadioMapModel, batch: Optional[TraceBatch] = None,
                  cache: Optional[VoglerCache] = None) -> np.ndarray:
    """Vectorized :func:`predict_attenuation` over many links."""
    arr = links_to_array(links)
    if batch is None:
        batch = trace_batch(arr, model.H.grid)
    heights = model.H.heights
    los = _los_batch(arr, model.los)
    I = indicator(batch, heights, model.indicator_mode)
    need = I < 1.0
    if model.indicator_mode == "soft":
        need &= batch.blocked(heights)
    want_scatter = not model.scatter.is_null
    terms = nlos_terms(batch, model.H, need, model.vogler, cache,
                       model.eccentricity if want_scatter else None,
                       model.scatter.feature_shape)
    nlos = model.los.beta0 + model.los.gamma0 * terms.log_curve + terms.excess
    if want_scatter:
        nlos = nlos + terms.pooled @ model.scatter.weights
    return np.where(need, I * los + (1.0 - I) * nlos, los)


def predict_attenuation(link: Link, model: RadioMapModel) -> float:
    return float(predict_batch([link], model)[0])


def _free_cells(H: ObstacleMap, below: float) -> np.ndarray:
    return np.flatnonzero(H.heights.ravel() < below)


def sample_links(H: ObstacleMap, n: int, rng: np.random.Generator,
                 sampling: SamplingConfig = SamplingConfig()) -> np.ndarray:
    """Draw ``n`` links as an (n, 6) array, rejecting TX inside obstacles."""
    grid = H.grid
    ext = np.array(grid.extent)
    org = np.array(grid.origin)
    lo, hi = sampling.tx_altitude
    if sampling.outdoor_rx and not len(_free_cells(H, sampling.rx_height)):
        raise PropagationError("no free cell can host a receiver")
    if hi <= H.heights.max() and not np.any(H.heights.ravel() < hi):
        raise PropagationError("TX altitude range lies below every obstacle")
    out = np.empty((0, 6))
    for _ in range(sampling.max_rounds):
        m = max(2 * (n - len(out)), 16)
        tx_xy = org + rng.random((m, 2)) * ext
        tx_z = lo + rng.random(m) * (hi - lo)
        rx_xy = org + rng.random((m, 2)) * ext
        cand = np.column_stack([tx_xy, tx_z, rx_xy, np.full(m, sampling.rx_height)])
        ti = _cell_of(grid, tx_xy)
        ri = _cell_of(grid, rx_xy)
        h = H.heights.ravel()
        ok = tx_z > h[ti]
        if sampling.outdoor_rx:
            ok &= h[ri] < sampling.rx_height
        ok &= np.hypot(*(tx_xy - rx_xy).T) > 0
        out = np.vstack([out, cand[ok]])
        if len(out) >= n:
            return out[:n]
    raise PropagationError("sampling region is degenerate: too few valid links")


def _cell_of(grid, xy: np.ndarray) -> np.ndarray:
    uv = np.floor(grid.to_cell_units(xy)).astype(int)
    uv[:, 0] = np.clip(uv[:, 0], 0, grid.rows - 1)
    uv[:, 1] = np.clip(uv[:, 1], 0, grid.cols - 1)
    return uv[:, 0] * grid.cols + uv[:, 1]


def generate_measurements(H_true: ObstacleMap, p: PathLossParams, cfg: VoglerConfig = VoglerConfig(),
                          n: int = 1000, noise_sigma: float = 3.0, seed: int = 0,
                          sampling: SamplingConfig = SamplingConfig(),
                          model: Optional[RadioMapModel] = None) -> List[Measurement]:
    """Synthetic measurements from the hard-indicator forward model plus noise.

    ``model`` overrides the generator (its ``H`` must be ``H_true``); by
    default the scatter term is null.
    """
    if n < 1:
        raise PropagationError("n must be >= 1")
    if not noise_sigma >= 0:
        raise PropagationError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    links = sample_links(H_true, n, rng, sampling)
    gen = model or RadioMapModel(H_true, p, cfg)
    y = predict_batch(links, gen) + noise_sigma * rng.standard_normal(n)
    return [Measurement(Link(row[:3], row[3:]), float(v)) for row, v in zip(links, y)]


def measurements_to_arrays(data: Sequence[Measurement]) -> Tuple[np.ndarray, np.ndarray]:
    if not len(data):
        return np.empty((0, 6)), np.empty(0)
    links = np.array([m.link.as_array() for m in data])
    y = np.array([m.y for m in data])
    return links, y


def metrics(y, yhat) -> Metrics:
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.size == 0:
        raise PropagationError("cannot evaluate on empty data")
    err = np.abs(y - yhat)
    denom = np.abs(y).sum()
    nmae = float(err.sum() / denom) if denom > 0 else (0.0 if err.sum() == 0 else math.inf)
    return Metrics(float(err.mean()), nmae, int(y.size))


def evaluate(model: RadioMapModel, data: Sequence[Measurement]) -> Metrics:
    if not len(data):
        raise PropagationError("cannot evaluate on empty data")
    links, y = measurements_to_arrays(data)
    return metrics(y, predict_batch(links, model))
