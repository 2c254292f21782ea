"""Independent reference implementations used to pin expected test values.

These deliberately avoid the library's own code paths: high-precision
arithmetic for kernel values, explicit enumeration for the octant map,
finite differences for gradients, and flattened dense gradients for the
empirical kernel.
"""

from __future__ import annotations

import numpy as np


def kernel_value_mp(u, L: int, a, dps: int = 60):
    """Kernel recursion in mpmath arbitrary precision (>= 50 significant digits)."""
    import mpmath as mp

    with mp.workdps(dps):
        a2 = mp.mpf(a) ** 2
        u = mp.mpf(u)

        def k0(c):
            return (mp.pi - mp.acos(c)) / mp.pi

        def k1(c):
            return (c * (mp.pi - mp.acos(c)) + mp.sqrt(1 - c ** 2)) / mp.pi

        K = [u]
        for l in range(1, L):
            g = (1 + a2) ** (l - 1)
            K.append(K[l - 1] + a2 * g * k1(K[l - 1] / g))
        B = [mp.mpf(1)] * (L + 2)  # B[l], l = 0..L+1; B[L+1] = 1
        for l in range(L, 1, -1):
            g = (1 + a2) ** (l - 1)
            B[l] = B[l + 1] * (1 + a2 * k0(K[l - 1] / g))
        C = 1 / (2 * L * (1 + a2) ** (L - 1))
        total = mp.mpf(0)
        for l in range(1, L + 1):
            g = (1 + a2) ** (l - 1)
            c = K[l - 1] / g
            total += B[l + 1] * (g * k1(c) + K[l - 1] * k0(c))
        return C * total


# Frozen from kernel_value_mp(-1, 2, "0.5") at 60 digits.
GOLDEN_U_MINUS1_L2_A05 = -0.0341866229520847799290140100085


def octant_by_enumeration(x) -> int:
    """Literal sign-pattern enumeration of the 8 octants, >= 0 counted positive."""
    x = np.asarray(x, dtype=float)
    for label in range(8):
        want = [(label >> b) & 1 for b in range(3)]
        if all((xi >= 0) == bool(w) for xi, w in zip(x, want)):
            return label
    raise AssertionError("unreachable: every point matches one sign pattern")


def directional_derivative(f, mat: np.ndarray, idx, eps: float = 1e-4) -> float:
    """Central finite difference of f() along one matrix coordinate."""
    old = mat[idx]
    mat[idx] = old + eps
    fp = f()
    mat[idx] = old - eps
    fm = f()
    mat[idx] = old
    return (fp - fm) / (2.0 * eps)


def flattened_rnk(net, x1, x2) -> float:
    """Empirical kernel via fully materialized gradients of the combined output."""
    from rntk_lab.resnet import backward, forward

    g1 = backward(net, forward(net, x1))
    g2 = backward(net, forward(net, x2))
    total = 0.0
    for p in range(2):
        for l in range(net.cfg.depth):
            total += float(np.sum(g1.dW[p][l] * g2.dW[p][l]))
            total += float(np.sum(g1.dV[p][l] * g2.dV[p][l]))
    return total


def two_point_flow_by_hand(g: float, y: np.ndarray, t: float, n: int = 2) -> np.ndarray:
    """Closed-form flow fit at two training points with Gram [[1, g], [g, 1]].

    Eigenpairs are known symbolically: (1 + g) on (1, 1)/sqrt(2) and
    (1 - g) on (1, -1)/sqrt(2).
    """
    s = (y[0] + y[1]) / 2.0
    d = (y[0] - y[1]) / 2.0
    fs = s * (1.0 - np.exp(-(1.0 + g) * t / n))
    fd = d * (1.0 - np.exp(-(1.0 - g) * t / n))
    return np.array([fs + fd, fs - fd])
