"""Analytic residual-network tangent kernel (RNTK) on the unit sphere.

The kernel is zonal: r(x, x') depends only on u = <x, x'>.  It is
evaluated by a forward recursion K_0..K_{L-1} (covariance-like trace),
a backward recursion B_{L+1}..B_2 (sensitivity trace), and a weighted
sum normalized so that r(x, x) = 1:

    kappa0(u) = (pi - arccos u) / pi
    kappa1(u) = (u (pi - arccos u) + sqrt(1 - u^2)) / pi
    K_0 = u,  K_l = K_{l-1} + a^2 (1+a^2)^{l-1} kappa1(K_{l-1} / (1+a^2)^{l-1})
    B_{L+1} = 1,  B_l = B_{l+1} (1 + a^2 kappa0(K_{l-1} / (1+a^2)^{l-1}))
    r = C sum_{l=1}^{L} B_{l+1} [ (1+a^2)^{l-1} kappa1(c_l) + K_{l-1} kappa0(c_l) ],
        c_l = K_{l-1} / (1+a^2)^{l-1},  C = 1 / (2 L (1+a^2)^{L-1})

On the diagonal K_l = (1+a^2)^l and B_l = (1+a^2)^{L+1-l}, so every
layer contributes 2 (1+a^2)^{L-1} and the sum collapses to 1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

# Dot products of unit vectors may stray outside [-1, 1] by rounding;
# anything within CLAMP_TOL is clamped, beyond it is a domain error.
CLAMP_TOL = 1e-9
# Dot products this close to +-1 are snapped exactly.  kappa0/kappa1 have
# sqrt(1 - u^2) behaviour at the endpoints, so without the snap a diagonal
# entry computed from u = 1 - 1e-16 would already be ~1e-8 off.
SNAP_TOL = 1e-11

_GRAM_MAGIC = b"RNTKGRAM"


@dataclass(frozen=True)
class KernelConfig:
    """Depth and residual-branch scale shared by the analytic kernel and the networks.

    depth counts residual blocks and must be >= 2; scale lies strictly in (0, 1).
    """

    depth: int
    scale: float

    def __post_init__(self):
        if not isinstance(self.depth, (int, np.integer)) or self.depth < 2:
            raise ValueError(f"depth must be an integer >= 2, got {self.depth!r}")
        if not (0.0 < float(self.scale) < 1.0):
            raise ValueError(f"scale must lie in (0, 1), got {self.scale!r}")

    @property
    def normalizer(self) -> float:
        """C = 1 / (2 L (1+a^2)^(L-1)), the diagonal-normalizing constant."""
        a2 = self.scale * self.scale
        return 1.0 / (2.0 * self.depth * (1.0 + a2) ** (self.depth - 1))

    @property
    def gradient_kernel_scale(self) -> float:
        """2 L a^2 (1+a^2)^(L-1): diagonal value of the raw gradient kernel.

        The unnormalized infinite-width gradient kernel of the matching
        network equals this constant times r, so finite networks scale
        their output by its inverse square root (see resnet module).
        """
        a2 = self.scale * self.scale
        return 2.0 * self.depth * a2 * (1.0 + a2) ** (self.depth - 1)


@dataclass(frozen=True)
class KernelTrace:
    """Full intermediate state of one kernel evaluation.

    u is the (clamped) inner product; K holds K_0..K_{L-1}; B holds
    B_2..B_{L+1}; value is the kernel value.
    """

    u: float
    K: np.ndarray
    B: np.ndarray
    value: float


def kappa0(u):
    """(pi - arccos u) / pi, elementwise; monotone from 0 at -1 to 1 at +1."""
    u = _check_unit_interval(u)
    return 1.0 - np.arccos(u) / np.pi


def kappa1(u):
    """(u (pi - arccos u) + sqrt(1-u^2)) / pi, elementwise; 0 at -1, 1 at +1."""
    u = _check_unit_interval(u)
    return (u * (np.pi - np.arccos(u)) + np.sqrt(1.0 - np.square(u))) / np.pi


def _check_unit_interval(u):
    u = np.asarray(u, dtype=np.float64)
    if np.any(np.abs(u) > 1.0 + CLAMP_TOL):
        bad = np.max(np.abs(u))
        raise ValueError(f"inner product {bad!r} outside [-1, 1] beyond tolerance {CLAMP_TOL}")
    return np.clip(u, -1.0, 1.0)


def zonal_value(u, cfg: KernelConfig):
    """Kernel value at inner product(s) u.  Vectorized; the scalar/array,
    pairwise, and Gram entry points all route through this single path."""
    return _recursion(_check_unit_interval(u), cfg, want_trace=False)[0]


def _snap_endpoints(u: np.ndarray) -> np.ndarray:
    u = np.where(np.abs(u - 1.0) <= SNAP_TOL, 1.0, u)
    return np.where(np.abs(u + 1.0) <= SNAP_TOL, -1.0, u)


def _recursion(u: np.ndarray, cfg: KernelConfig, want_trace: bool):
    L = cfg.depth
    a2 = cfg.scale * cfg.scale
    growth = (1.0 + a2) ** np.arange(L)  # (1+a^2)^(l-1) for l = 1..L

    # The normalized arguments K_{l-1}/(1+a^2)^{l-1} drift a few ulps off
    # +-1 on (near-)diagonal inputs; kappa0/kappa1 have sqrt singularities
    # there, so the drift must be snapped away before each kappa call.
    def ratio(l: int) -> np.ndarray:
        return _snap_endpoints(K[l - 1] / growth[l - 1])

    K = np.empty((L,) + u.shape)
    K[0] = u
    for l in range(1, L):
        K[l] = K[l - 1] + a2 * growth[l - 1] * kappa1(ratio(l))

    B = np.empty((L,) + u.shape)  # B[i] = B_{i+2}, i.e. B_2..B_{L+1}
    B[L - 1] = 1.0
    for l in range(L, 1, -1):  # fills B_L down to B_2
        B[l - 2] = B[l - 1] * (1.0 + a2 * kappa0(ratio(l)))

    total = np.zeros_like(u)
    for l in range(1, L + 1):
        c = ratio(l)
        total += B[l - 1] * (growth[l - 1] * kappa1(c) + K[l - 1] * kappa0(c))
    value = cfg.normalizer * total
    return value, (K, B) if want_trace else None


def _pair_inner(x: np.ndarray, x2: np.ndarray) -> float:
    x = check_unit_rows(np.asarray(x, dtype=np.float64).reshape(1, -1))[0]
    x2 = check_unit_rows(np.asarray(x2, dtype=np.float64).reshape(1, -1))[0]
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {x2.shape[0]}")
    return _snap(float(np.dot(x, x2)))


def _snap(u: float) -> float:
    if abs(u - 1.0) <= SNAP_TOL:
        return 1.0
    if abs(u + 1.0) <= SNAP_TOL:
        return -1.0
    return u


def rntk_eval(x, x2, cfg: KernelConfig) -> KernelTrace:
    """Evaluate the kernel for one pair of unit vectors, keeping the trace."""
    u = np.float64(_check_unit_interval(_pair_inner(x, x2)))
    value, (K, B) = _recursion(u, cfg, want_trace=True)
    return KernelTrace(u=float(u), K=K, B=B, value=float(value))


def rntk_value(x, x2, cfg: KernelConfig) -> float:
    """Kernel value for one pair, without retaining the trace."""
    return float(zonal_value(_pair_inner(x, x2), cfg))


def check_unit_rows(X: np.ndarray, tol: float = CLAMP_TOL) -> np.ndarray:
    """Validate that every row of X has unit norm (within tol) and d >= 2."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError(f"expected an (n, d) array with d >= 2, got shape {X.shape}")
    norms = np.linalg.norm(X, axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise ValueError(f"rows must be unit vectors; worst norm deviation {worst:.3e}")
    return X


def inner_matrix(X: np.ndarray, X2: np.ndarray | None = None) -> np.ndarray:
    """Clamped, endpoint-snapped inner products between unit rows."""
    X = check_unit_rows(X)
    if X2 is None:
        U = X @ X.T
        U = (U + U.T) / 2.0  # exact symmetry under floating point
    else:
        X2 = check_unit_rows(X2)
        if X.shape[1] != X2.shape[1]:
            raise ValueError(f"dimension mismatch: {X.shape[1]} vs {X2.shape[1]}")
        U = X @ X2.T
    U = np.where(np.abs(U - 1.0) <= SNAP_TOL, 1.0, U)
    U = np.where(np.abs(U + 1.0) <= SNAP_TOL, -1.0, U)
    return _check_unit_interval(U)


def rntk_gram(X: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    """Symmetric unit-diagonal Gram matrix r(X, X).

    Only the upper triangle is evaluated; the lower is mirrored, so
    symmetry is exact rather than to rounding.
    """
    U = inner_matrix(X)
    n = U.shape[0]
    iu = np.triu_indices(n)
    vals = zonal_value(U[iu], cfg)
    G = np.zeros((n, n))
    G[iu] = vals
    G = G + np.triu(G, 1).T
    return G


def cross_gram(probes: np.ndarray, X: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    """Rectangular kernel matrix r(probes, X)."""
    return zonal_value(inner_matrix(probes, X), cfg)


def save_gram_csv(G: np.ndarray, path) -> None:
    """Full row-major matrix, shortest round-trip decimals, LF endings."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for row in np.asarray(G, dtype=np.float64):
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def load_gram_csv(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    return np.array(rows, dtype=np.float64)


def save_gram_binary(G: np.ndarray, path) -> None:
    """Little-endian f64 dump with a 16-byte header: magic, u32 n, u32 reserved."""
    G = np.ascontiguousarray(np.asarray(G, dtype="<f8"))
    n = G.shape[0]
    if G.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {G.shape}")
    with open(path, "wb") as fh:
        fh.write(_GRAM_MAGIC)
        fh.write(struct.pack("<II", n, 0))
        fh.write(G.tobytes(order="C"))


def load_gram_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:8] != _GRAM_MAGIC:
            raise ValueError(f"{path}: not a Gram dump (bad magic)")
        n, _reserved = struct.unpack("<II", header[8:])
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n * n:
        raise ValueError(f"{path}: expected {n * n} values, found {data.size}")
    return data.reshape(n, n).copy()
