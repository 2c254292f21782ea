"""Sphere-harmonic spectrum of zonal kernels by one-dimensional quadrature.

A zonal kernel g(<x, x'>) on S^{d-1} under the uniform measure has
eigenvalues mu_k per harmonic frequency k, each with multiplicity
N(d, k).  Projecting onto the degree-k zonal polynomial P_{k,d}
(Gegenbauer, normalized to P_{k,d}(1) = 1) reduces each eigenvalue to

    mu_k = Z_d * int_{-1}^{1} g(t) P_{k,d}(t) (1 - t^2)^{(d-3)/2} dt,

where Z_d makes the expansion self-consistent: sum_k N(d,k) mu_k = g(1).
Z_d is fixed numerically as the reciprocal of the same quadrature applied
to the constant kernel at k = 0, so a constant kernel reproduces
mu_0 = g(1) exactly.  Quadrature is Gauss-Legendre with the weight folded
into the integrand; node counts double adaptively because g has
square-root behaviour at t = 1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .flow import sym_eig
from .kernel import KernelConfig, inner_matrix, zonal_value
from .rng import STREAM_DATA, make_rng
from .sphere import sample_uniform_sphere

_NODE_CAP = 8192
_ADAPT_TOL = 1e-8
_NEG_TOL = 1e-8


def multiplicity(d: int, k: int) -> int:
    """Number of degree-k spherical harmonics on S^{d-1}.

    N(d, 0) = 1 and N(d, k) = ((2k + d - 2) / k) C(k + d - 3, k - 1),
    which is Theta(k^{d-2}): 2k+1 on S^2, constant 2 on the circle.
    """
    if d < 2:
        raise ValueError(f"d must be >= 2, got {d}")
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    if k == 0:
        return 1
    num = (2 * k + d - 2) * math.comb(k + d - 3, k - 1)
    assert num % k == 0
    return num // k


def gegenbauer_table(k_max: int, d: int, t: np.ndarray) -> np.ndarray:
    """P_{0..k_max, d}(t) rows via the three-term recurrence

        P_{k+1} = ((2k + d - 2) t P_k - k P_{k-1}) / (k + d - 2),

    which keeps P_{k,d}(1) = 1 exactly for every k and d >= 2 (Legendre
    for d = 3, Chebyshev for d = 2)."""
    t = np.asarray(t, dtype=np.float64)
    P = np.empty((k_max + 1,) + t.shape)
    P[0] = 1.0
    if k_max >= 1:
        P[1] = t
    for k in range(1, k_max):
        P[k + 1] = ((2 * k + d - 2) * t * P[k] - k * P[k - 1]) / (k + d - 2)
    return P


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    stderr: float
    ci_low: float
    ci_high: float
    window: tuple
    n_points: int


def fit_decay(xs, ys, window) -> DecayFit:
    """OLS slope of log y against log x over the points with x in window.

    window is an inclusive (lo, hi) range on the x values; at least five
    points must fall inside, and all selected values must be positive.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    lo, hi = window
    mask = (xs >= lo) & (xs <= hi)
    x = xs[mask]
    y = ys[mask]
    if x.shape[0] < 5:
        raise ValueError(f"window {window} selects only {x.shape[0]} points; need >= 5")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit requires positive values")
    lx, ly = np.log(x), np.log(y)
    lx0 = lx - lx.mean()
    sxx = float(np.sum(lx0 * lx0))
    slope = float(np.sum(lx0 * ly) / sxx)
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (intercept + slope * lx)
    dof = max(x.shape[0] - 2, 1)
    stderr = math.sqrt(float(np.sum(resid * resid)) / dof / sxx)
    half = 1.96 * stderr
    return DecayFit(slope=slope, intercept=intercept, stderr=stderr,
                    ci_low=slope - half, ci_high=slope + half,
                    window=(float(lo), float(hi)), n_points=int(x.shape[0]))


@dataclass(frozen=True)
class SpectralProfile:
    """Per-frequency spectrum of one zonal kernel.

    mu[k] are the frequency eigenvalues, mult[k] their multiplicities,
    lambda_flat the multiplicity-expanded nonincreasing sequence, and
    trace_partial = sum_k mult[k] mu[k] (approaches g(1) as k_max grows).
    """

    d: int
    k_max: int
    mu: np.ndarray
    mult: np.ndarray
    lambda_flat: np.ndarray
    trace_partial: float
    quad_nodes_used: int
    slope_mu: DecayFit | None
    slope_lambda: DecayFit | None


def flatten_spectrum(profile: SpectralProfile) -> np.ndarray:
    """Each mu_k repeated N(d, k) times, sorted nonincreasing."""
    return _flatten(profile.mu, profile.mult)


def _flatten(mu: np.ndarray, mult: np.ndarray) -> np.ndarray:
    lam = np.repeat(mu, mult)
    return np.sort(lam)[::-1]


def _quad_mu(zonal, d: int, k_max: int, nodes: int) -> np.ndarray:
    t, w = np.polynomial.legendre.leggauss(nodes)
    fold = w * (1.0 - t * t) ** ((d - 3) / 2.0)
    z_inv = float(np.sum(fold))
    g = np.asarray(zonal(t), dtype=np.float64)
    P = gegenbauer_table(k_max, d, t)
    return (P @ (fold * g)) / z_inv


def funk_hecke_mu(cfg: KernelConfig | None, d: int, k_max: int, quad_nodes: int,
                  zonal=None, mu_window: tuple | None = None,
                  lambda_window: tuple = (50.0, 2000.0)) -> SpectralProfile:
    """Frequency eigenvalues mu_0..mu_k_max of a zonal kernel.

    zonal defaults to the analytic kernel for cfg; pass any vectorized
    u -> g(u) to analyze other kernels (test hooks use constant/linear g).
    Node counts start at quad_nodes and double until mu stabilizes to
    1e-8 or the 8192 cap.  Decay slopes are fitted on default windows that
    skip k < 8 and the top 10% of frequencies.
    """
    if d < 2:
        raise ValueError(f"d must be >= 2, got {d}")
    if k_max < 4:
        raise ValueError(f"k_max must be >= 4, got {k_max}")
    if quad_nodes < 4 * k_max:
        raise ValueError(f"quad_nodes must be >= 4 k_max = {4 * k_max}, got {quad_nodes}")
    if zonal is None:
        if cfg is None:
            raise ValueError("either cfg or an explicit zonal function is required")
        zonal = lambda u: zonal_value(np.clip(u, -1.0, 1.0), cfg)

    nodes = min(quad_nodes, _NODE_CAP)
    mu = _quad_mu(zonal, d, k_max, nodes)
    while nodes < _NODE_CAP:
        nxt = min(2 * nodes, _NODE_CAP)
        mu_next = _quad_mu(zonal, d, k_max, nxt)
        delta = float(np.max(np.abs(mu_next - mu)))
        mu, nodes = mu_next, nxt
        if delta < _ADAPT_TOL:
            break

    if float(np.min(mu)) < -_NEG_TOL:
        raise NumericalError(f"negative eigenvalue {float(np.min(mu)):.3e} beyond tolerance {_NEG_TOL}")
    mult = np.array([multiplicity(d, k) for k in range(k_max + 1)], dtype=np.int64)
    trace = float(mult @ mu)
    g1 = float(np.asarray(zonal(np.array([1.0]))).reshape(-1)[0])
    if g1 - trace > 0.05:
        warnings.warn(f"spectrum truncated early: trace {trace:.4f} vs g(1) = {g1:.4f} at k_max = {k_max}",
                      stacklevel=2)

    lam = _flatten(mu, mult)
    if mu_window is None:
        mu_window = (8.0, math.floor(0.9 * k_max))
    ks = np.arange(k_max + 1, dtype=np.float64)
    slope_mu = _try_fit(ks, mu, mu_window)
    slope_lambda = _try_fit(np.arange(1, lam.shape[0] + 1, dtype=np.float64), lam, lambda_window)
    return SpectralProfile(d=d, k_max=k_max, mu=mu, mult=mult, lambda_flat=lam,
                           trace_partial=trace, quad_nodes_used=nodes,
                           slope_mu=slope_mu, slope_lambda=slope_lambda)


def _try_fit(xs, ys, window) -> DecayFit | None:
    try:
        return fit_decay(xs, ys, window)
    except ValueError:
        return None


def nystrom_check(cfg: KernelConfig | None, d: int, n: int, seed: int,
                  q: int = 20, zonal=None) -> np.ndarray:
    """Top-q eigenvalues of r(X, X)/n on uniform points: an independent
    finite-sample estimate of the leading operator eigenvalues."""
    if n < 200:
        raise ValueError(f"n must be >= 200, got {n}")
    X = sample_uniform_sphere(n, d, seed, stream=STREAM_DATA).X
    if zonal is None:
        if cfg is None:
            raise ValueError("either cfg or an explicit zonal function is required")
        G = zonal_value(inner_matrix(X), cfg)
    else:
        G = np.asarray(zonal(inner_matrix(X)), dtype=np.float64)
    G = (G + G.T) / 2.0
    eig = sym_eig(G / n)
    return eig.eigenvalues[:q].copy()
