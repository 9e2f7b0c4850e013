"""Learning the virtual obstacle map and path-loss parameters from data.

Pipeline: :func:`init_cluster` splits samples into LOS/NLOS by fitting two
log-distance lines, :func:`init_obstacle_map` fits heights to those labels
through the soft indicator, and :func:`fit_model` refines heights and the
linear parameters against the squared prediction error.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .diffraction import VoglerConfig, vogler_excess_gradient
from .geometry import GridSpec, Link, ObstacleMap, TraceBatch, links_to_array, trace_batch
from .propagation import Measurement, PathLossParams, RadioMapModel, measurements_to_arrays
from .stn import POOLED_FEATURE_NAMES, ScatterRegressor, pooled_features, scatter_features

log = logging.getLogger(__name__)

BCE_CLIP = 1e-7
OPTIMIZER_NAME = "scaled-clipped-gd"


class FitError(RuntimeError):
    pass


class FitDivergenceError(FitError):
    def __init__(self, msg: str, history: List[float], best: Optional["FitResult"] = None):
        super().__init__(f"{msg}; loss history (last 10): {history[-10:]}")
        self.history = history
        self.best = best


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 0.5      # meters per step for a fully clipped gradient
    epochs: int = 40
    batch_size: int = 8192          # links per epoch; 0 means all
    height_clamp_max: float = 100.0
    init_height: float = 0.0
    convergence_tol: float = 1e-6
    seed: int = 0
    # label fitting
    bce_learning_rate: float = 2.0
    bce_iterations: int = 150
    cluster_iterations: int = 10
    # step control
    grad_clip: float = 1.0
    patience: int = 5
    steps_per_epoch: int = 10
    # scatter regressor
    fit_scatter: bool = True
    diffraction_gradient: bool = True
    # residual indicator during the joint fit; "hard" passes gradients
    # through the soft indicator (straight-through)
    train_indicator: str = "hard"
    feature_shape: Tuple[int, int] = (16, 16)
    eccentricity: float = 0.8
    ridge: float = 1e-6

    def __post_init__(self):
        if not self.learning_rate > 0 or not self.bce_learning_rate > 0:
            raise ValueError("learning rates must be positive")
        if int(self.epochs) < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.init_height <= self.height_clamp_max:
            raise ValueError("need 0 <= init_height <= height_clamp_max")
        if self.batch_size < 0:
            raise ValueError("batch_size must be >= 0")
        if self.train_indicator not in ("hard", "soft"):
            raise ValueError("train_indicator must be 'hard' or 'soft'")


@dataclass(frozen=True, eq=False)
class ClusterState:
    beta1: float
    gamma1: float
    beta2: float
    gamma2: float
    labels: np.ndarray  # 0 = LOS, 1 = NLOS


@dataclass(frozen=True, eq=False)
class FitResult:
    model: RadioMapModel
    loss: float
    history: List[float]
    epochs_run: int
    optimizer: str = OPTIMIZER_NAME


# ---------------------------------------------------------------------------
# log-distance lines and Algorithm-2 style clustering


def _log_distance(links: np.ndarray) -> np.ndarray:
    return np.log10(np.linalg.norm(links[:, :3] - links[:, 3:], axis=1))


def _line_fit(x: np.ndarray, y: np.ndarray) -> Optional[Tuple[float, float]]:
    if len(x) < 2 or np.ptp(x) == 0:
        return None
    A = np.column_stack([np.ones_like(x), x])
    (b, g), *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(b), float(g)


def fit_distance_only(data: Sequence[Measurement]) -> PathLossParams:
    """Least-squares log-distance model over all samples (the no-map baseline)."""
    links, y = measurements_to_arrays(data)
    fit = _line_fit(_log_distance(links), y)
    if fit is None:
        raise FitError("need samples at two or more distinct distances")
    return PathLossParams(*fit)


def init_cluster(data: Sequence[Measurement], K: int = 10) -> ClusterState:
    """Split samples between two log-distance lines.

    Line 1 starts at the global least-squares fit, line 2 at the same slope
    20 dB higher.  Each of ``K`` rounds assigns samples to the line with the
    smaller absolute residual and refits both lines (a line whose cluster is
    degenerate keeps its parameters).  The line with the lower mean
    prediction over all samples is the LOS line.
    """
    links, y = measurements_to_arrays(data)
    x = _log_distance(links)
    fit = _line_fit(x, y)
    if fit is None:
        raise FitError("need samples at two or more distinct distances")
    b1, g1 = fit
    b2, g2 = b1 + 20.0, g1
    in1 = np.ones(len(y), dtype=bool)
    for _ in range(K):
        in1 = np.abs(y - (b1 + g1 * x)) <= np.abs(y - (b2 + g2 * x))
        f1 = _line_fit(x[in1], y[in1])
        f2 = _line_fit(x[~in1], y[~in1])
        if f1 is not None:
            b1, g1 = f1
        if f2 is not None:
            b2, g2 = f2
    if np.mean(b1 + g1 * x) <= np.mean(b2 + g2 * x):
        labels = (~in1).astype(int)
        return ClusterState(b1, g1, b2, g2, labels)
    return ClusterState(b2, g2, b1, g1, in1.astype(int))


# ---------------------------------------------------------------------------
# losses and gradients with respect to H


def _soft(batch: TraceBatch, heights: np.ndarray):
    h = np.asarray(heights, dtype=float).ravel()[batch.cells]
    active = (batch.z > 0) & (h > batch.z)
    S = np.add.reduceat(np.where(active, h - batch.z, 0.0), batch.indptr[:-1])
    return S, active


def _chain_to_heights(batch: TraceBatch, active: np.ndarray, dL_dS: np.ndarray, n_cells: int):
    w = np.where(active, dL_dS[batch.owner], 0.0)
    return np.bincount(batch.cells, weights=w, minlength=n_cells)


def bce_loss_grad(batch: TraceBatch, heights: np.ndarray, labels: np.ndarray):
    """Cross-entropy of the soft indicator against LOS targets ``1 - label``.

    ``log I`` is evaluated as ``log 2 - 2 S - log1p(exp(-2 S))`` so deeply
    blocked links keep a gradient; ``1 - I = tanh S`` is clipped at
    ``BCE_CLIP`` where it would reach ``log 0``.  Returns ``(loss, grad)``
    with ``grad`` shaped like ``heights``.
    """
    heights = np.asarray(heights, dtype=float)
    S, active = _soft(batch, heights)
    t = 1.0 - np.asarray(labels, dtype=float)
    n = len(S)
    e = np.exp(-2.0 * S)
    log_I = math.log(2.0) - 2.0 * S - np.log1p(e)
    th = np.tanh(S)
    th_c = np.maximum(th, BCE_CLIP)
    loss = -np.mean(t * log_I + (1.0 - t) * np.log(th_c))
    # d log I / dS = -(1 + tanh S); d log tanh S / dS = sech^2 S / tanh S
    dlogI = -(1.0 + th)
    with np.errstate(divide="ignore", invalid="ignore"):
        dlogT = np.where(th > BCE_CLIP, (1.0 - th ** 2) / th, 0.0)
    dL_dS = -(t * dlogI + (1.0 - t) * dlogT) / n
    grad = _chain_to_heights(batch, active, dL_dS, heights.size)
    return float(loss), grad.reshape(heights.shape)


def mse_loss_grad(batch: TraceBatch, heights: np.ndarray, y: np.ndarray,
                  los: np.ndarray, nlos: np.ndarray, jac=None, h0: Optional[np.ndarray] = None,
                  forward: str = "soft"):
    """Mean squared error of ``I los + (1 - I) nlos``.  Returns ``(loss, grad)``.

    Without ``jac`` the NLOS branch is a constant and heights act only
    through the soft indicator.  With a sparse ``jac`` (links x cells) the
    branch is linearized about ``h0``: ``nlos + jac (h - h0)``.  With
    ``forward="hard"`` the residual uses the hard indicator while the
    gradient still flows through the soft one.
    """
    heights = np.asarray(heights, dtype=float)
    S, active = _soft(batch, heights)
    th = np.tanh(S)
    I = (~batch.blocked(heights)).astype(float) if forward == "hard" else 1.0 - th
    if jac is not None:
        nlos = nlos + jac @ (heights.ravel() - np.asarray(h0, dtype=float).ravel())
    r = I * los + (1.0 - I) * nlos - y
    n = len(S)
    loss = float(np.mean(r ** 2))
    dL_dS = (2.0 / n) * r * (los - nlos) * -(1.0 - th ** 2)
    grad = _chain_to_heights(batch, active, dL_dS, heights.size)
    if jac is not None:
        grad = grad + jac.T @ ((2.0 / n) * r * (1.0 - I))
    return loss, grad.reshape(heights.shape)


def _scaled_step(batch: TraceBatch, heights: np.ndarray, grad: np.ndarray,
                 lr: float, clip: float, hmax: float,
                 extra_users: Optional[np.ndarray] = None,
                 min_scale: Optional[np.ndarray] = None) -> np.ndarray:
    """Divide each cell's gradient by the share of links currently acting
    on it (at least ``min_scale``), clip, and take a projected step."""
    _, active = _soft(batch, heights)
    users = np.bincount(batch.cells[active], minlength=heights.size)
    if extra_users is not None:
        users = users + extra_users
    scale = np.maximum(users, 1) / max(len(batch), 1)
    if min_scale is not None:
        scale = np.maximum(scale, min_scale.ravel())
    scale = scale.reshape(heights.shape)
    step = np.clip(grad / scale, -clip, clip)
    return np.clip(heights - lr * step, 0.0, hmax)


# ---------------------------------------------------------------------------
# label fit


def _labeled_arrays(labeled):
    if isinstance(labeled, tuple) and len(labeled) == 2 and isinstance(labeled[1], np.ndarray):
        links, labels = labeled
        return links_to_array(links), np.asarray(labels)
    links = links_to_array([lk for lk, _ in labeled])
    labels = np.array([c for _, c in labeled])
    return links, labels


def init_obstacle_map(labeled, grid: GridSpec, cfg: FitConfig = FitConfig(),
                      start: Optional[ObstacleMap] = None,
                      batch: Optional[TraceBatch] = None) -> ObstacleMap:
    """Fit heights to LOS/NLOS labels by descending the soft-indicator
    cross-entropy.

    ``labeled`` is a sequence of ``(Link, label)`` pairs or a ``(links,
    labels)`` array pair.  Descent starts from ``start`` or, by default, a
    flat map at ``cfg.height_clamp_max``: below the direct line the ReLU
    obstruction has no gradient, so heights can only be lowered onto the
    labels from above.  Cells that no link reaches keep no information and
    are reset to ``cfg.init_height``.
    """
    links, labels = _labeled_arrays(labeled)
    if not np.all(np.isin(labels, (0, 1))):
        raise FitError("labels must be 0 (LOS) or 1 (NLOS)")
    if batch is None:
        batch = trace_batch(links, grid)
    H = (start.heights if start is not None
         else np.full(grid.shape, cfg.height_clamp_max)).astype(float).copy()
    prev = math.inf
    for it in range(int(cfg.bce_iterations)):
        loss, g = bce_loss_grad(batch, H, labels)
        if not math.isfinite(loss):
            raise FitDivergenceError("non-finite cross-entropy", [loss])
        H_new = _scaled_step(batch, H, g, cfg.bce_learning_rate, cfg.grad_clip, cfg.height_clamp_max)
        moved = float(np.abs(H_new - H).max())
        H = H_new
        if moved < cfg.convergence_tol and abs(prev - loss) < cfg.convergence_tol:
            break
        prev = loss
    if start is None:
        # cells no link passes under the ceiling never saw a gradient
        reached = np.zeros(H.size, dtype=bool)
        reached[batch.cells[(batch.z > 0) & (batch.z < cfg.height_clamp_max)]] = True
        H.ravel()[~reached] = cfg.init_height
    return ObstacleMap(grid, H)


# ---------------------------------------------------------------------------
# joint fit


class _ExcessCache:
    """Excess loss and its edge-angle gradient keyed by exact geometry."""

    def __init__(self, cfg: VoglerConfig):
        self.cfg = cfg
        self._store = {}

    def get(self, path):
        key = path.d.tobytes() + path.theta.tobytes()
        val = self._store.get(key)
        if val is None:
            val = vogler_excess_gradient(path, self.cfg)
            self._store[key] = val
        return val

    def clear(self):
        self._store.clear()


@dataclass(eq=False)
class _EpochState:
    los_x: np.ndarray       # log10 of the direct distance
    I: np.ndarray
    log_curve: np.ndarray
    excess: np.ndarray
    pooled: Optional[np.ndarray]
    has_path: np.ndarray
    jac_curve: Optional[sparse.csr_matrix]   # d log10(curve) / dh
    jac_excess: Optional[sparse.csr_matrix]  # d excess / dh


def _epoch_terms(batch: TraceBatch, H: ObstacleMap, cfg: FitConfig, cache: _ExcessCache,
                 los_x: np.ndarray) -> _EpochState:
    n = len(batch)
    S, _ = _soft(batch, H.heights)
    log_curve = np.zeros(n)
    excess = np.zeros(n)
    has_path = np.zeros(n, dtype=bool)
    pooled = np.zeros((n, len(POOLED_FEATURE_NAMES))) if cfg.fit_scatter else None
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    jc: List[np.ndarray] = []
    je: List[np.ndarray] = []
    for k in np.flatnonzero(batch.blocked(H.heights)):
        path = batch.diffraction_path(int(k), H.heights)
        curve = path.curve_length
        log_curve[k] = math.log10(curve)
        has_path[k] = True
        if path.n_edges:
            excess[k], dex = cache.get(path)
            if cfg.diffraction_gradient:
                dcurve, dtheta = path.height_sensitivities()
                rows.append(np.full(path.n_edges, k))
                cols.append(path.cells)
                jc.append(dcurve / (math.log(10.0) * curve))
                je.append(dex @ dtheta)
        if pooled is not None:
            link = Link(batch.links[k, :3], batch.links[k, 3:])
            pooled[k] = pooled_features(scatter_features(link, H, cfg.eccentricity,
                                                         cfg.feature_shape))
    jac_curve = jac_excess = None
    if cfg.diffraction_gradient:
        shape = (n, H.heights.size)
        if rows:
            r, c = np.concatenate(rows), np.concatenate(cols)
            jac_curve = sparse.csr_matrix((np.concatenate(jc), (r, c)), shape=shape)
            jac_excess = sparse.csr_matrix((np.concatenate(je), (r, c)), shape=shape)
        else:
            jac_curve = sparse.csr_matrix(shape)
            jac_excess = sparse.csr_matrix(shape)
    I = np.where(has_path, 0.0, 1.0) if cfg.train_indicator == "hard" else 1.0 - np.tanh(S)
    return _EpochState(los_x, I, log_curve, excess, pooled, has_path, jac_curve, jac_excess)


def _solve_theta(st: _EpochState, y: np.ndarray, cfg: FitConfig, fixed: Optional[PathLossParams]):
    """Least squares for (beta0, gamma0, scatter weights) given the indicator
    and diffraction terms."""
    w_nlos = np.where(st.has_path, 1.0 - st.I, 0.0)
    w_los = 1.0 - w_nlos
    target = y - w_nlos * st.excess
    x = w_los * st.los_x + w_nlos * st.log_curve
    B = (w_nlos[:, None] * st.pooled) if st.pooled is not None else np.zeros((len(y), 0))
    if fixed is not None:
        resid = target - fixed.beta0 - fixed.gamma0 * x
        w = _ridge(B, resid, cfg.ridge) if B.shape[1] else np.zeros(0)
        return fixed, w
    A = np.column_stack([np.ones_like(y), x, B])
    reg = np.zeros(A.shape[1])
    reg[2:] = cfg.ridge
    theta = _ridge(A, target, reg)
    gamma0 = theta[1]
    if not gamma0 > 0:
        raise FitError(f"least squares produced non-positive gamma0={gamma0:.4g}")
    return PathLossParams(float(theta[0]), float(gamma0)), theta[2:]


def _ridge(A, b, reg):
    """Column-normalized least squares with a diagonal penalty."""
    reg = np.broadcast_to(np.asarray(reg, dtype=float), (A.shape[1],))
    scale = np.sqrt((A ** 2).mean(axis=0))
    scale[scale == 0] = 1.0
    As = A / scale
    if not np.any(reg):
        return np.linalg.lstsq(As, b, rcond=None)[0] / scale
    G = As.T @ As / len(b) + np.diag(reg)
    return np.linalg.solve(G, As.T @ b / len(b)) / scale


def _branches(st: _EpochState, p: PathLossParams, w: np.ndarray):
    los = p.beta0 + p.gamma0 * st.los_x
    nlos = p.beta0 + p.gamma0 * st.log_curve + st.excess
    if st.pooled is not None and len(w):
        nlos = nlos + st.pooled @ w
    nlos = np.where(st.has_path, nlos, los)
    return los, nlos


def fit_model(data: Sequence[Measurement], init_H: ObstacleMap, cfg: FitConfig = FitConfig(),
              vogler: VoglerConfig = VoglerConfig(),
              fixed_params: Optional[PathLossParams] = None) -> FitResult:
    """Jointly fit heights and linear parameters to the squared error.

    Each epoch draws ``cfg.batch_size`` links (all of them when 0),
    recomputes their indicator, diffraction paths and Vogler terms from the
    current heights, and solves the linear parameters exactly by least
    squares.  It then takes ``cfg.steps_per_epoch`` projected gradient steps
    on the heights through the soft indicator and, with
    ``cfg.diffraction_gradient``, through the edge-top heights of the frozen
    diffraction paths (linearized).  With ``cfg.train_indicator == "hard"``
    the residual and the least-squares solve use the hard indicator, the
    one the returned model predicts with, and only the gradient goes
    through the soft indicator.

    The monitored loss is the epoch loss (smoothed across minibatches).  The
    step size halves whenever it rises; rising for ``cfg.patience`` epochs in
    a row aborts with :class:`FitDivergenceError`.  Full-batch fits return
    the best epoch; minibatch fits return the final heights with parameters
    solved on one more fresh draw.
    """
    links, y = measurements_to_arrays(data)
    if not len(y):
        raise FitError("no training data")
    n = len(y)
    grid = init_H.grid
    batch = trace_batch(links, grid)
    cache = _ExcessCache(vogler)
    los_x = _log_distance(links)
    rng = np.random.default_rng(cfg.seed)
    mini = 0 < cfg.batch_size < n
    H = init_H.heights.astype(float).copy()
    lr = cfg.learning_rate
    history: List[float] = []
    best = None
    best_monitor = math.inf
    monitor = None
    rises = 0
    epochs_run = 0

    def draw():
        if not mini:
            return batch, y, los_x
        idx = np.sort(rng.choice(n, cfg.batch_size, replace=False))
        return _sub_batch(batch, idx), y[idx], los_x[idx]

    for epoch in range(int(cfg.epochs)):
        epochs_run = epoch + 1
        Hmap = ObstacleMap(grid, H)
        b, yb, xb = draw()
        st = _epoch_terms(b, Hmap, cfg, cache, xb)
        cache.clear()
        params, w = _solve_theta(st, yb, cfg, fixed_params)
        los, nlos = _branches(st, params, w)
        loss = float(np.mean((st.I * los + (1.0 - st.I) * nlos - yb) ** 2))
        if not math.isfinite(loss):
            raise FitDivergenceError("non-finite training loss", history + [loss])
        history.append(loss)
        prev = monitor
        monitor = loss if (monitor is None or not mini) else 0.7 * monitor + 0.3 * loss
        log.debug("epoch %d loss %.6g monitor %.6g lr %.3g", epoch, loss, monitor, lr)
        if prev is not None and abs(prev - monitor) <= cfg.convergence_tol * max(prev, 1e-300):
            if not mini and monitor < best_monitor:
                best = (loss, Hmap, params, w)
            break
        if monitor < best_monitor:
            best_monitor = monitor
            best = (loss, Hmap, params, w)
        if prev is not None and monitor > prev:
            rises += 1
            lr *= 0.5
            if rises >= cfg.patience:
                raise FitDivergenceError(f"loss rose for {rises} consecutive epochs", history,
                                         _result(best, cfg, vogler, history, epochs_run))
        else:
            rises = 0
        if epoch == int(cfg.epochs) - 1:
            break
        jac = None
        if st.jac_curve is not None:
            jac = (params.gamma0 * st.jac_curve + st.jac_excess).tocsr()
        H = _height_steps(b, H, yb, los, nlos, jac, cfg, lr)
    if mini:
        Hmap = ObstacleMap(grid, H)
        b, yb, xb = draw()
        st = _epoch_terms(b, Hmap, cfg, cache, xb)
        params, w = _solve_theta(st, yb, cfg, fixed_params)
        los, nlos = _branches(st, params, w)
        loss = float(np.mean((st.I * los + (1.0 - st.I) * nlos - yb) ** 2))
        best = (loss, Hmap, params, w)
    return _result(best, cfg, vogler, history, epochs_run)


def _height_steps(batch, H, y, los, nlos, jac, cfg: FitConfig, lr: float) -> np.ndarray:
    h0 = H.copy()
    vertex_users = floor = None
    if jac is not None:
        vertex_users = np.bincount(jac.indices, minlength=H.size)
        floor = lr * _branch_curvature_bound(batch, H, jac)
    for _ in range(int(cfg.steps_per_epoch)):
        _, g = mse_loss_grad(batch, H, y, los, nlos, jac, h0, cfg.train_indicator)
        H = _scaled_step(batch, H, g, lr, cfg.grad_clip, cfg.height_clamp_max, vertex_users, floor)
    return H


def _branch_curvature_bound(batch: TraceBatch, H: np.ndarray, jac) -> np.ndarray:
    """Gershgorin row sums of the Hessian of the linearized NLOS term.

    Using them as a floor on the step scale keeps the height update
    contractive on that quadratic; without it the update oscillates and
    grows until the clip stops it.
    """
    blocked = batch.blocked(H).astype(float)
    A = abs(jac)
    row = np.asarray(A.sum(axis=1)).ravel()
    return (2.0 / max(len(batch), 1)) * (A.T @ (blocked * row))


def _result(best, cfg: FitConfig, vogler: VoglerConfig, history, epochs_run) -> FitResult:
    loss, Hmap, params, w = best
    if cfg.fit_scatter:
        scatter = ScatterRegressor("linear", w, cfg.feature_shape)
    else:
        scatter = ScatterRegressor.null()
    model = RadioMapModel(Hmap, params, vogler, scatter, cfg.eccentricity, "hard")
    return FitResult(model, loss, list(history), epochs_run)


def _sub_batch(batch: TraceBatch, idx: np.ndarray) -> TraceBatch:
    idx = np.sort(idx)
    starts = batch.indptr[idx]
    counts = batch.indptr[idx + 1] - starts
    take = np.repeat(starts - np.concatenate([[0], np.cumsum(counts)[:-1]]), counts) \
        + np.arange(counts.sum())
    indptr = np.concatenate([[0], np.cumsum(counts)])
    return TraceBatch(batch.links[idx], indptr, batch.cells[take], batch.s[take],
                      batch.z[take], batch.grid)


def reconstruct(data: Sequence[Measurement], grid: GridSpec, cfg: FitConfig = FitConfig(),
                vogler: VoglerConfig = VoglerConfig()) -> Tuple[FitResult, ClusterState]:
    """Clustering, label fit and joint fit in sequence."""
    links, _ = measurements_to_arrays(data)
    clusters = init_cluster(data, cfg.cluster_iterations)
    H0 = init_obstacle_map((links, clusters.labels), grid, cfg)
    return fit_model(data, H0, cfg, vogler), clusters


# ---------------------------------------------------------------------------
# nearest-neighbour baseline


def _knn_weights(dist: np.ndarray, s: float) -> np.ndarray:
    # shifting by the nearest distance leaves normalized weights unchanged
    d2 = dist ** 2
    return np.exp(-(d2 - d2.min(axis=-1, keepdims=True)) / (2.0 * s * s))


def knn_predict(train: Sequence[Measurement], query: Link, k: int = 6, s: float = 50.0) -> float:
    """Gaussian-weighted mean of the ``k`` nearest samples in 6-D link space.

    Ties in distance go to the earlier sample.
    """
    links, y = measurements_to_arrays(train)
    if not len(y):
        raise FitError("empty training set")
    if k < 1 or k > len(y):
        raise FitError(f"k must lie in [1, {len(y)}]")
    dist = np.linalg.norm(links - query.as_array()[None, :], axis=1)
    nn = np.argsort(dist, kind="stable")[:k]
    w = _knn_weights(dist[nn], s)
    return float(w @ y[nn] / w.sum())


def knn_predict_batch(train: Sequence[Measurement], queries, k: int = 6, s: float = 50.0) -> np.ndarray:
    links, y = measurements_to_arrays(train)
    if not len(y):
        raise FitError("empty training set")
    if k < 1 or k > len(y):
        raise FitError(f"k must lie in [1, {len(y)}]")
    q = links_to_array(queries)
    dist, nn = cKDTree(links).query(q, k=k)
    dist = dist.reshape(len(q), k)
    nn = nn.reshape(len(q), k)
    w = _knn_weights(dist, s)
    return (w * y[nn]).sum(axis=1) / w.sum(axis=1)
