"""Reproducible datasets on the unit sphere S^{d-1}.

Inputs are always unit-norm rows; labels are either real regression
targets (optionally with Gaussian noise) or class indices (optionally
corrupted).  Every generator is a pure function of its arguments and
seed; distinct concerns (inputs, noise, corruption, target construction)
draw from distinct named streams of the same seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .kernel import KernelConfig, check_unit_rows, cross_gram, rntk_gram
from .rng import STREAM_CORRUPT, STREAM_DATA, STREAM_NOISE, STREAM_TARGET, make_rng


@dataclass(frozen=True)
class SphereDataset:
    """Inputs X (n x d unit rows) with labels y and pre-noise labels clean_y.

    classes is None for regression; otherwise labels are indices in
    {0..classes-1}.  seed == -1 marks datasets re-imported from CSV,
    whose generation metadata is not recoverable.
    """

    X: np.ndarray
    y: np.ndarray
    clean_y: np.ndarray
    seed: int
    noise_sigma: float = 0.0
    corruption_p: float = 0.0
    classes: int | None = None

    def __post_init__(self):
        check_unit_rows(self.X, tol=1e-9)
        n = self.X.shape[0]
        if self.y.shape != (n,) or self.clean_y.shape != (n,):
            raise ValueError(f"labels must have shape ({n},), got {self.y.shape} / {self.clean_y.shape}")
        if not (0.0 <= self.corruption_p <= 1.0):
            raise ValueError(f"corruption_p must lie in [0, 1], got {self.corruption_p}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def sample_uniform_sphere(n: int, d: int, seed: int, stream: int = STREAM_DATA) -> SphereDataset:
    """n i.i.d. uniform points on S^{d-1} via normalized standard Gaussians."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if d < 2:
        raise ValueError(f"d must be >= 2, got {d}")
    rng = make_rng(seed, stream)
    X = rng.standard_normal((n, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    zeros = np.zeros(n)
    return SphereDataset(X=X, y=zeros, clean_y=zeros.copy(), seed=seed)


def make_octant_target(x: np.ndarray) -> int:
    """Class index in {0..7} from the sign pattern of a point on S^2.

    Each coordinate contributes its bit (1 when >= 0) with weights 1, 2, 4.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != 3:
        raise ValueError(f"octant target is defined on S^2 (d = 3), got d = {x.shape[0]}")
    bits = (x >= 0.0).astype(int)
    return int(bits[0] + 2 * bits[1] + 4 * bits[2])


def octant_labels(X: np.ndarray) -> np.ndarray:
    """Vectorized octant classes for rows of X (d = 3)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 3:
        raise ValueError(f"octant target is defined on S^2 (d = 3), got shape {X.shape}")
    bits = (X >= 0.0).astype(int)
    return bits[:, 0] + 2 * bits[:, 1] + 4 * bits[:, 2]


def make_octant_dataset(n: int, seed: int, stream: int = STREAM_DATA) -> SphereDataset:
    """Uniform points on S^2 with clean octant class labels."""
    base = sample_uniform_sphere(n, 3, seed, stream=stream)
    labels = octant_labels(base.X).astype(np.int64)
    return replace(base, y=labels, clean_y=labels.copy(), classes=8)


def corrupt_labels(ds: SphereDataset, p: float, seed: int) -> SphereDataset:
    """Independently replace each label with probability p by a uniform
    class draw (which may repeat the original).  clean_y is preserved."""
    if ds.classes is None:
        raise ValueError("corrupt_labels requires a classification dataset")
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"p must lie in [0, 1], got {p}")
    rng = make_rng(seed, STREAM_CORRUPT)
    hit = rng.random(ds.n) < p
    draws = rng.integers(0, ds.classes, size=ds.n)
    y = np.where(hit, draws, ds.y).astype(np.int64)
    return replace(ds, y=y, corruption_p=float(p))


@dataclass(frozen=True)
class RKHSTarget:
    """Finite kernel expansion f(x) = sum_j weights_j r(x, centers_j).

    Weights are scaled at construction so the norm proxy
    sqrt(w^T r(Z, Z) w) equals rkhs_norm (1 by default), certifying the
    target lives in the kernel's function space with known norm.
    """

    centers: np.ndarray
    weights: np.ndarray
    kernel: KernelConfig
    rkhs_norm: float

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return cross_gram(np.asarray(X, dtype=np.float64), self.centers, self.kernel) @ self.weights


def make_rkhs_target(d: int, kernel: KernelConfig, k_centers: int, seed: int) -> RKHSTarget:
    """Random unit-norm member of the kernel's function space."""
    if k_centers < 1:
        raise ValueError(f"k_centers must be >= 1, got {k_centers}")
    centers = sample_uniform_sphere(k_centers, d, seed, stream=STREAM_TARGET).X
    rng = make_rng(seed, STREAM_TARGET, 2)
    w = rng.standard_normal(k_centers)
    Gz = rntk_gram(centers, kernel)
    q = math.sqrt(float(w @ Gz @ w))
    if q <= 0:
        raise ValueError("degenerate target draw: zero norm proxy")
    return RKHSTarget(centers=centers, weights=w / q, kernel=kernel, rkhs_norm=1.0)


def make_rkhs_regression_set(n: int, d: int, kernel: KernelConfig, k_centers: int,
                             noise_sigma: float, seed: int) -> tuple[SphereDataset, RKHSTarget]:
    """Uniform inputs, in-space target of unit norm proxy, Gaussian label noise."""
    target = make_rkhs_target(d, kernel, k_centers, seed)
    base = sample_uniform_sphere(n, d, seed)
    clean = target(base.X)
    if noise_sigma > 0:
        noise = make_rng(seed, STREAM_NOISE).normal(0.0, noise_sigma, size=n)
    else:
        noise = np.zeros(n)
    ds = replace(base, y=clean + noise, clean_y=clean, noise_sigma=float(noise_sigma))
    return ds, target


def _format_value(v, integral: bool) -> str:
    if integral:
        return str(int(v))
    return repr(float(v))


def save_csv(ds: SphereDataset, path) -> None:
    """Header x0..x{d-1},y,clean_y; shortest round-trip decimals; LF endings."""
    integral = ds.classes is not None
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join([f"x{i}" for i in range(ds.d)] + ["y", "clean_y"]))
        fh.write("\n")
        for i in range(ds.n):
            cells = [repr(float(v)) for v in ds.X[i]]
            cells.append(_format_value(ds.y[i], integral))
            cells.append(_format_value(ds.clean_y[i], integral))
            fh.write(",".join(cells))
            fh.write("\n")


def load_csv(path, classes: int | None = None) -> SphereDataset:
    """Inverse of save_csv.  Generation metadata is not stored in the CSV,
    so seed is set to -1 and sigma/p to 0."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[-2:] != ["y", "clean_y"] or not header[0].startswith("x"):
            raise ValueError(f"{path}: unexpected header {header!r}")
        d = len(header) - 2
        rows = [line.strip().split(",") for line in fh if line.strip()]
    X = np.array([[float(c) for c in r[:d]] for r in rows])
    if classes is not None:
        y = np.array([int(r[d]) for r in rows], dtype=np.int64)
        clean = np.array([int(r[d + 1]) for r in rows], dtype=np.int64)
    else:
        y = np.array([float(r[d]) for r in rows])
        clean = np.array([float(r[d + 1]) for r in rows])
    return SphereDataset(X=X, y=y, clean_y=clean, seed=-1, classes=classes)
