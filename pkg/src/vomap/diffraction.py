"""Vogler multiple knife-edge diffraction.

The attenuation over ``N`` knife edges is

    F_N = 2^-N C_N exp(sigma_N) (2/sqrt(pi))^N
          * int_{beta_1}^inf ... int_{beta_N}^inf exp(2 f) prod exp(-u_i^2) du

with ``f = sum_i alpha_i (u_i - beta_i)(u_{i+1} - beta_{i+1})``.  Expanding
``exp(2 f)`` turns each coordinate integral into a repeated integral of erfc,
``I(n, beta) = i^n erfc(beta)``, and grouping by total order ``m`` gives the
series ``F_N = 2^-N C_N exp(sigma_N) sum_m I_m`` that is evaluated here through
the nested ``C(i, a, b)`` recursion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit
from numpy.polynomial.legendre import leggauss
from scipy import special

from .geometry import DiffractionPath, Link, ObstacleMap, extract_diffraction_path

SPEED_OF_LIGHT = 299_792_458.0
DEFAULT_FREQUENCY_HZ = 5.9e9

# order beyond which the recurrences lose too much precision in float64
MAX_ERFC_ORDER = 160
MILLER_MAX_START = 100_000

_FACT = np.array([math.factorial(k) for k in range(MAX_ERFC_ORDER + 2)], dtype=float)


class DiffractionError(ValueError):
    pass


@dataclass(frozen=True)
class VoglerConfig:
    wavelength: float = SPEED_OF_LIGHT / DEFAULT_FREQUENCY_HZ
    series_tolerance: float = 1e-8
    max_series_terms: int = 64
    max_edges_exact: int = 8

    def __post_init__(self):
        if not self.wavelength > 0:
            raise DiffractionError("wavelength must be positive")
        if not 0 < self.series_tolerance < 1:
            raise DiffractionError("series_tolerance must lie in (0, 1)")
        if int(self.max_series_terms) < 1:
            raise DiffractionError("max_series_terms must be >= 1")
        if int(self.max_series_terms) > MAX_ERFC_ORDER:
            raise DiffractionError(f"max_series_terms is capped at {MAX_ERFC_ORDER}")
        if int(self.max_edges_exact) < 1:
            raise DiffractionError("max_edges_exact must be >= 1")


@dataclass(frozen=True)
class VoglerResult:
    F: complex
    excess_loss_db: float
    terms_used: int
    converged: bool
    method: str = "series"


def erfc_complex(z) -> complex:
    """Complementary error function of a complex argument."""
    return special.erfc(np.asarray(z, dtype=complex))[()]


def repeated_erfc_sequence(max_order: int, beta: complex) -> np.ndarray:
    """``[I(0, beta), ..., I(max_order, beta)]`` with ``I(n, .) = i^n erfc``.

    Uses ``2n I(n) = I(n-2) - 2 beta I(n-1)`` seeded by erfc and the Gaussian
    ``I(-1) = (2/sqrt(pi)) exp(-beta^2)``.  For ``Re(beta) > 0`` and
    ``|beta| > 0.5``, ``I(n)`` is the minimal solution and Miller's downward
    recurrence normalized to erfc is used, started far enough out for the
    competing solution to decay; elsewhere the upward direction is stable.
    Near the imaginary axis with ``|beta| > 4`` neither direction is
    accurate in float64; Vogler arguments have phase pi/4 and never go there.
    """
    if max_order < 0:
        raise DiffractionError("order must be nonnegative")
    if max_order > MAX_ERFC_ORDER:
        raise DiffractionError(
            f"order {max_order} exceeds the float64 recurrence cap {MAX_ERFC_ORDER}; "
            "use higher-precision arithmetic for larger orders")
    beta = complex(beta)
    erfc0 = complex(erfc_complex(beta))
    re = beta.real
    if re <= 0.0 or abs(beta) <= 0.5:
        return _forward(max_order, beta, erfc0)
    # the competing solution outgrows I(n, beta) like exp(2 Re(beta) sqrt(2n))
    start = int((math.sqrt(2.0 * max_order) + 20.0 / re) ** 2 / 2.0 + 2.0 * abs(beta) ** 2)
    if start > MILLER_MAX_START:
        return _forward(max_order, beta, erfc0)
    return _miller(max_order, beta, erfc0, start + max_order + 20)


@njit(cache=True)
def _forward(max_order, beta, erfc0):
    out = np.empty(max_order + 1, dtype=np.complex128)
    out[0] = erfc0
    prev = 2.0 / math.sqrt(math.pi) * np.exp(-beta * beta)
    cur = erfc0
    for n in range(1, max_order + 1):
        nxt = (prev - 2.0 * beta * cur) / (2.0 * n)
        prev = cur
        cur = nxt
        out[n] = cur
    return out


@njit(cache=True)
def _miller(max_order, beta, erfc0, start):
    vals = np.zeros(max_order + 1, dtype=np.complex128)
    f_hi = 0.0j          # I(start + 1)
    f_mid = 1e-300 + 0.0j  # I(start)
    for n in range(start + 1, 1, -1):
        f_lo = 2.0 * n * f_hi + 2.0 * beta * f_mid  # I(n - 2)
        f_hi = f_mid
        f_mid = f_lo
        if n - 2 <= max_order:
            vals[n - 2] = f_lo
        if abs(f_lo) > 1e250:
            f_hi *= 1e-250
            f_mid *= 1e-250
            vals *= 1e-250
    if vals[0] == 0:
        return np.zeros(max_order + 1, dtype=np.complex128)
    return vals * (erfc0 / vals[0])


def repeated_erfc_integral(m: int, beta: complex) -> complex:
    """``I(m, beta)`` such that ``(2/sqrt(pi)) int_beta^inf (u-beta)^m e^{-u^2} du = m! I``."""
    return complex(repeated_erfc_sequence(int(m), beta)[m])


def _edge_parameters(d: np.ndarray, theta: np.ndarray, wavelength: float):
    """beta_i, alpha_i, C_N and sigma_N for the geometry."""
    N = len(theta)
    d1, d2 = d[:-1], d[1:]
    beta = theta * np.sqrt(1j * np.pi * d1 * d2 / (wavelength * (d1 + d2)))
    if N >= 2:
        alpha = np.sqrt(d[:-2] * d[2:] / ((d[:-2] + d[1:-1]) * (d[1:-1] + d[2:])))
        c_n = math.sqrt(np.sum(d) * np.prod(d[1:-1]) / np.prod(d[:-1] + d[1:]))
    else:
        alpha = np.empty(0)
        c_n = 1.0
    sigma = np.sum(beta[:-1] ** 2)
    return beta, alpha, c_n, sigma


def _series_terms(beta, alpha, K: int, seqs=None) -> np.ndarray:
    """``I_m`` for ``m = 0..K``.

    The terms are linear in each edge's sequence ``I(., beta_i)``; passing
    ``seqs`` with one sequence replaced by its beta-derivative yields the
    derivative of the terms.
    """
    N = len(beta)
    if seqs is None:
        seqs = [repeated_erfc_sequence(K, b) for b in beta]
    m = np.arange(K + 1)
    if N == 1:
        out = np.zeros(K + 1, dtype=complex)
        out[0] = seqs[0][0]
        return out
    if N == 2:
        return (2.0 ** m) * _FACT[m] * alpha[0] ** m * seqs[0] * seqs[1]
    lower = m[:, None] >= m[None, :]
    diff = np.where(lower, m[:, None] - m[None, :], 0)
    # terminal C(N-1, a, b) = b! alpha_{N-1}^a I(b, beta_{N-1}) I(a, beta_N)
    C = (_FACT[m][None, :] * (alpha[N - 2] ** m)[:, None]
         * seqs[N - 2][None, :] * seqs[N - 1][:, None])
    C = np.where(lower.T, C, 0.0)
    for i in range(N - 3, 0, -1):
        # C(i, a, b) = sum_c (b-c)!/(a-c)! alpha^(a-c) I(b-c, beta) C(i+1, c, a)
        A = np.where(lower, alpha[i] ** diff / _FACT[diff], 0.0)
        B = np.where(lower, _FACT[diff] * seqs[i][diff], 0.0)
        C = np.einsum("ac,bc,ca->ab", A, B, C)
        C = np.where(lower.T, C, 0.0)
    # I_m = 2^m sum_{m1} alpha_1^(m-m1) I(m-m1, beta_1) C(2, m1, m)
    A = np.where(lower, alpha[0] ** diff * seqs[0][diff], 0.0)
    return (2.0 ** m) * np.einsum("mc,cm->m", A, C)


def _pairwise(beta: np.ndarray) -> VoglerResult:
    F = complex(np.prod(erfc_complex(beta) / 2.0))
    return VoglerResult(F, _loss_db(F), len(beta), True, "pairwise")


def _loss_db(F: complex) -> float:
    mag = abs(F)
    return float("inf") if mag == 0 else float(-20.0 * math.log10(mag))


def vogler_attenuation(path: DiffractionPath, cfg: VoglerConfig = VoglerConfig()) -> VoglerResult:
    """Vogler attenuation factor for the knife edges of ``path``.

    Paths with more than ``cfg.max_edges_exact`` edges fall back to a product
    of single-edge factors (``method="pairwise"``).
    """
    return _vogler(path, cfg)[0]


def _vogler(path: DiffractionPath, cfg: VoglerConfig):
    d = np.asarray(path.d, dtype=float)
    theta = np.asarray(path.theta, dtype=float)
    N = len(theta)
    if N == 0:
        raise DiffractionError("no knife edges: a line-of-sight link has no Vogler factor")
    if np.any(d <= 0):
        raise DiffractionError("edge separations must be positive")
    beta, alpha, c_n, sigma = _edge_parameters(d, theta, cfg.wavelength)
    if N > cfg.max_edges_exact:
        return _pairwise(beta), None
    prefactor = c_n * np.exp(sigma) / 2.0 ** N
    if N == 1:
        F = complex(prefactor * erfc_complex(beta[0]))
        return VoglerResult(F, _loss_db(F), 1, True), (beta, alpha, prefactor, 0)
    max_terms = int(cfg.max_series_terms)
    K = min(16, max_terms) - 1
    while True:
        terms = _series_terms(beta, alpha, K)
        partial = np.cumsum(terms)
        small = np.abs(terms[1:]) < cfg.series_tolerance * np.abs(partial[1:])
        hit = np.flatnonzero(small)
        if len(hit):
            used = int(hit[0]) + 2
            F = complex(prefactor * partial[used - 1])
            return VoglerResult(F, _loss_db(F), used, True), (beta, alpha, prefactor, used - 1)
        if K + 1 >= max_terms:
            F = complex(prefactor * partial[-1])
            return VoglerResult(F, _loss_db(F), K + 1, False), (beta, alpha, prefactor, K)
        K = min(2 * (K + 1), max_terms) - 1


def vogler_excess_gradient(path: DiffractionPath, cfg: VoglerConfig = VoglerConfig()):
    """Excess loss (dB) and its derivative with respect to each edge angle.

    Uses ``d/dbeta I(n, beta) = -I(n-1, beta)`` on the same truncated series
    as :func:`vogler_attenuation`, so the derivative is exact for the value
    that function returns.
    """
    res, state = _vogler(path, cfg)
    d = np.asarray(path.d, dtype=float)
    theta = np.asarray(path.theta, dtype=float)
    N = len(theta)
    dbeta_dtheta = np.sqrt(1j * np.pi * d[:-1] * d[1:] / (cfg.wavelength * (d[:-1] + d[1:])))
    gauss = lambda b: 2.0 / math.sqrt(math.pi) * np.exp(-b * b)
    if state is None:
        beta = theta * dbeta_dtheta
        # log|F| = sum log|erfc(beta_i)/2|
        dlog = -gauss(beta) / erfc_complex(beta)
        dF_over_F = dlog * dbeta_dtheta
    else:
        beta, alpha, prefactor, K = state
        dF = np.empty(N, dtype=complex)
        if N == 1:
            dF[0] = -prefactor * gauss(beta[0])
        else:
            seqs = [repeated_erfc_sequence(K, b) for b in beta]
            S = np.sum(_series_terms(beta, alpha, K, seqs))
            for j in range(N):
                dseq = np.empty(K + 1, dtype=complex)
                dseq[0] = -gauss(beta[j])
                dseq[1:] = -seqs[j][:-1]
                alt = list(seqs)
                alt[j] = dseq
                dS = np.sum(_series_terms(beta, alpha, K, alt))
                dsig = 2.0 * beta[j] if j < N - 1 else 0.0
                dF[j] = prefactor * (dsig * S + dS)
        dF_over_F = dF * dbeta_dtheta / res.F
    # excess = -20 log10 |F|; d|F|/|F| = Re(dF / F)
    return res.excess_loss_db, -20.0 / math.log(10.0) * np.real(dF_over_F)


def _gauss_nodes(T: float, panels: int, order: int = 32):
    x, w = leggauss(order)
    edges = np.linspace(0.0, T, panels + 1)
    half = np.diff(edges) / 2
    mid = (edges[:-1] + edges[1:]) / 2
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _iterated_integral(beta, alpha, nodes, weights) -> complex:
    """Iterated integral over shifted rays ``u_i = beta_i + t_i``, innermost last."""
    N = len(beta)
    t = nodes
    inner = np.ones_like(t, dtype=complex)
    for i in range(N - 2, -1, -1):
        # inner(t_i) = sum_k w_k exp(2 alpha_i t_i t_k - u_{i+1}(t_k)^2) inner(t_k)
        expo = 2.0 * alpha[i] * np.outer(t, t) - ((beta[i + 1] + t) ** 2)[None, :]
        inner = np.exp(expo) @ (weights * inner)
    return complex(np.sum(weights * np.exp(-(beta[0] + t) ** 2) * inner))


def quadrature_oracle(path: DiffractionPath, cfg: VoglerConfig = VoglerConfig(),
                      rtol: float = 1e-11) -> complex:
    """Attenuation factor by direct iterated quadrature of the N-fold integral.

    Each coordinate is integrated along ``u_i = beta_i + t`` for ``t`` in
    ``[0, T]``, with ``T`` set from the smallest eigenvalue of the Gaussian
    quadratic form so the truncated tail is below 1e-10.  Composite
    Gauss-Legendre panels are doubled until successive estimates agree.
    """
    d = np.asarray(path.d, dtype=float)
    theta = np.asarray(path.theta, dtype=float)
    N = len(theta)
    if N < 1 or N > 3:
        raise DiffractionError("quadrature oracle supports 1 to 3 edges")
    beta, alpha, c_n, sigma = _edge_parameters(d, theta, cfg.wavelength)
    Q = np.eye(N) - np.diag(alpha, 1) - np.diag(alpha, -1)
    lam = float(np.linalg.eigvalsh(Q).min())
    if lam <= 0:
        raise DiffractionError("integrand does not decay for this geometry")
    T = math.sqrt((math.log(1e10) + N * math.log(10.0)) / lam) + 1.0
    prefactor = c_n * np.exp(sigma) / 2.0 ** N * (2.0 / math.sqrt(math.pi)) ** N
    panels = max(4, int(T * (2 + np.abs(beta).max())))
    prev = None
    for _ in range(8):
        nodes, weights = _gauss_nodes(T, panels)
        val = prefactor * _iterated_integral(beta, alpha, nodes, weights)
        if prev is not None and abs(val - prev) <= rtol * abs(val):
            return complex(val)
        prev = val
        panels *= 2
    return complex(prev)


def diffraction_loss_db(link: Link, H: ObstacleMap, params, cfg: VoglerConfig = VoglerConfig(),
                        path: Optional[DiffractionPath] = None) -> float:
    """Loss over the diffraction curve: log-distance along it plus Vogler excess.

    ``params`` supplies ``beta0`` and ``gamma0``.  A blocked link whose only
    obstructions enclose an endpoint has no knife edges; it gets the
    log-distance term alone.

    Raises:
        LineOfSightError: if the link is not blocked.
    """
    if path is None:
        path = extract_diffraction_path(link, H)
    base = params.beta0 + params.gamma0 * math.log10(path.curve_length)
    if path.n_edges == 0:
        return float(base)
    return float(base + vogler_attenuation(path, cfg).excess_loss_db)
