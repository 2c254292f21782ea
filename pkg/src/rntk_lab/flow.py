"""Closed-form kernel gradient-flow regression and risk estimation.

With Gram matrix G = r(X, X) = Q diag(lambda) Q^T, the flow started at
zero under squared loss has the explicit solution

    f_t(x) = r(x, X) Q diag(h(lambda_i, t)) Q^T y,
    h(lambda, t) = (1 - exp(-lambda t / n)) / lambda,

with h -> t/n as lambda -> 0 and h -> 1/lambda at t = infinity (the
interpolation limit, with tiny eigenvalues pseudo-inverted to zero).
A plain explicit-Euler iteration on the training residuals serves as an
independent oracle for the closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergedError, NumericalError
from .kernel import KernelConfig, check_unit_rows, cross_gram, rntk_gram
from .rng import STREAM_MC, make_rng
from .sphere import sample_uniform_sphere

# Below this, the flow factor switches to its analytic lambda -> 0 limit t/n.
_SMALL_EXPONENT = 1e-8
# Interpolation limit treats eigenvalues under this fraction of the top one as zero.
_PINV_RTOL = 1e-12


@dataclass(frozen=True)
class GramEig:
    """Spectral decomposition of a symmetric Gram matrix.

    eigenvalues are sorted nonincreasing; eigenvectors holds matching
    orthonormal columns; jitter_used records any diagonal regularization
    that was needed for the solver to converge (normally 0).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    n: int
    jitter_used: float

    @property
    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues[-1])


@dataclass(frozen=True)
class FlowRegressor:
    """Immutable state for closed-form flow predictions on one dataset."""

    train_X: np.ndarray
    eig: GramEig
    y: np.ndarray
    cfg: KernelConfig


@dataclass(frozen=True)
class RiskEstimate:
    value: float
    std_error: float
    n_mc: int


def sym_eig(G: np.ndarray, symmetry_tol: float = 1e-10) -> GramEig:
    """Full spectral decomposition of a symmetric matrix.

    Raises NumericalError (with the residual) if the reconstruction
    Q diag(lambda) Q^T fails to match G to 1e-10 relative even after a
    jittered retry.
    """
    G = np.asarray(G, dtype=np.float64)
    n = G.shape[0]
    if G.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {G.shape}")
    asym = np.max(np.abs(G - G.T)) if n else 0.0
    scale = max(float(np.max(np.abs(G))), 1.0)
    if asym > symmetry_tol * scale:
        raise ValueError(f"matrix is not symmetric: max asymmetry {asym:.3e}")

    jitter = 0.0
    Gw = G
    for attempt in range(3):
        try:
            vals, vecs = np.linalg.eigh(Gw)
        except np.linalg.LinAlgError:
            jitter = (10.0 ** attempt) * 1e-12 * scale
            Gw = G + jitter * np.eye(n)
            continue
        order = np.argsort(vals)[::-1]
        vals = vals[order]
        vecs = vecs[:, order]
        eig = GramEig(eigenvalues=vals, eigenvectors=vecs, n=n, jitter_used=jitter)
        _verify_reconstruction(G, eig)
        return eig
    raise NumericalError(f"eigendecomposition failed to converge for n={n} (jitter up to {jitter:.1e})")


def _verify_reconstruction(G: np.ndarray, eig: GramEig, tol: float = 1e-10) -> None:
    R = (eig.eigenvectors * eig.eigenvalues) @ eig.eigenvectors.T
    denom = max(float(np.linalg.norm(G)), 1e-300)
    resid = float(np.linalg.norm(R - G)) / denom
    ortho = float(np.linalg.norm(eig.eigenvectors.T @ eig.eigenvectors - np.eye(eig.n)))
    if resid > tol or ortho > tol:
        raise NumericalError(
            f"eigendecomposition residuals too large: reconstruction {resid:.3e}, orthogonality {ortho:.3e}")


def make_flow_regressor(X: np.ndarray, y: np.ndarray, cfg: KernelConfig) -> FlowRegressor:
    """Assemble the Gram matrix of the analytic kernel and decompose it."""
    X = check_unit_rows(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (X.shape[0],):
        raise ValueError(f"y must have shape ({X.shape[0]},), got {y.shape}")
    return FlowRegressor(train_X=X, eig=sym_eig(rntk_gram(X, cfg)), y=y, cfg=cfg)


def _flow_factor(eigenvalues: np.ndarray, t: float, n: int) -> np.ndarray:
    """(1 - exp(-lambda t / n)) / lambda with stable small-lambda and t=inf limits."""
    lam = eigenvalues
    if math.isinf(t):
        cut = _PINV_RTOL * max(float(lam[0]), 0.0)
        with np.errstate(divide="ignore"):
            inv = np.where(lam > cut, 1.0 / np.where(lam > cut, lam, 1.0), 0.0)
        return inv
    x = lam * (t / n)
    out = np.empty_like(lam)
    small = np.abs(x) < _SMALL_EXPONENT
    out[small] = t / n
    nz = ~small
    out[nz] = -np.expm1(-x[nz]) / lam[nz]
    return out


def flow_coefficients(reg: FlowRegressor, t: float) -> np.ndarray:
    """Representer coefficients beta(t) with f_t(x) = r(x, X) beta(t)."""
    if t < 0:
        raise ValueError(f"flow time must be >= 0, got {t}")
    eig = reg.eig
    h = _flow_factor(eig.eigenvalues, t, eig.n)
    return eig.eigenvectors @ (h * (eig.eigenvectors.T @ reg.y))

def flow_predict(reg: FlowRegressor, t: float, probes: np.ndarray) -> np.ndarray:
    """Closed-form flow predictions at flow time t (t = math.inf allowed)."""
    beta = flow_coefficients(reg, t)
    return cross_gram(np.asarray(probes, dtype=np.float64), reg.train_X, reg.cfg) @ beta


def flow_predict_train(reg: FlowRegressor, t: float) -> np.ndarray:
    """Fitted values at the training points themselves."""
    eig = reg.eig
    h = _flow_factor(eig.eigenvalues, t, eig.n)
    coef = (h * eig.eigenvalues) * (eig.eigenvectors.T @ reg.y)
    return eig.eigenvectors @ coef


def flow_gd_oracle(reg: FlowRegressor, lr: float, steps: int, probes: np.ndarray) -> np.ndarray:
    """Explicit-Euler kernel gradient descent, independent of the eigenpath.

    Iterates representer coefficients beta <- beta - (lr/n) (G beta - y)
    from beta = 0 (equivalently u <- u - (lr/n) G (u - y) for the fitted
    values u = G beta), then transports to the probes.
    """
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    n = reg.eig.n
    G = (reg.eig.eigenvectors * reg.eig.eigenvalues) @ reg.eig.eigenvectors.T
    beta = np.zeros(n)
    y = reg.y
    resid0 = float(np.linalg.norm(y)) or 1.0
    for step in range(steps):
        resid = G @ beta - y
        rnorm = float(np.linalg.norm(resid))
        if not math.isfinite(rnorm) or rnorm > 10.0 * resid0:
            raise DivergedError(f"kernel GD residual grew to {rnorm:.3e} at step {step}", step)
        beta = beta - (lr / n) * resid
    return cross_gram(np.asarray(probes, dtype=np.float64), reg.train_X, reg.cfg) @ beta


def early_stop_time(n: int, d: int, c: float) -> float:
    """Stopping time c * n^(d / (2d - 1))."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if d < 2:
        raise ValueError(f"d must be >= 2, got {d}")
    if c <= 0:
        raise ValueError(f"scale must be positive, got {c}")
    return c * float(n) ** (d / (2.0 * d - 1.0))


def excess_risk_mc(predict, target, n_mc: int, seed: int, d: int) -> RiskEstimate:
    """Monte Carlo mean squared deviation between predict and target over
    the uniform sphere, with its standard error.

    predict/target map an (n, d) array of unit rows to n values.
    """
    if n_mc < 100:
        raise ValueError(f"n_mc must be >= 100, got {n_mc}")
    ds = sample_uniform_sphere(n_mc, d, seed=seed, stream=STREAM_MC)
    sq = np.square(np.asarray(predict(ds.X), dtype=np.float64)
                   - np.asarray(target(ds.X), dtype=np.float64))
    value = float(np.mean(sq))
    std_error = float(np.std(sq, ddof=1) / math.sqrt(n_mc))
    return RiskEstimate(value=value, std_error=std_error, n_mc=n_mc)
