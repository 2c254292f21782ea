"""Finite-width residual networks with mirrored zero-output initialization.

Architecture (per branch, width m, depth L, residual scale a):

    alpha_0 = A x / sqrt(m)
    alpha_l = alpha_{l-1} + (a / sqrt(m)) V_l relu(sqrt(2/m) W_l alpha_{l-1})
    branch output = v . alpha_L            (or head^T alpha_L in K-class mode)

Two branches start from identical N(0,1) parameters and are combined as

    f(x) = out_scale * (sqrt(2)/2) * (branch1(x) - branch2(x)),

which is exactly zero at initialization.  out_scale = 1/sqrt(2 L a^2 (1+a^2)^{L-1})
normalizes the gradient inner-product kernel of f so that its infinite-width
limit is the unit-diagonal analytic kernel from the kernel module; with it,
training under squared loss tracks the closed-form kernel flow at time
t = step * lr.

A and v (and the class head) stay frozen; only the W_l, V_l of both branches
receive gradient updates.  Per-layer gradients are rank one,

    dW_l f = a gamma_l alpha_{l-1}^T,   dV_l f = a delta_l eta_l^T,

which the empirical-kernel path exploits to avoid materializing m x m
matrices: each layer contributes a^2 (<gamma,gamma'> <alpha,alpha'> +
<delta,delta'> <eta,eta'>).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergedError, InvalidStateError
from .kernel import KernelConfig, check_unit_rows
from .rng import STREAM_INIT, make_rng

_SQRT_HALF = math.sqrt(0.5)


class BranchParams:
    """One branch's parameter set. A, v and head are frozen; W, V train."""

    __slots__ = ("A", "W", "V", "v", "head")

    def __init__(self, A, W, V, v, head):
        self.A = A
        self.W = W
        self.V = V
        self.v = v
        self.head = head

    def copy(self) -> "BranchParams":
        return BranchParams(
            self.A.copy(),
            [w.copy() for w in self.W],
            [v.copy() for v in self.V],
            None if self.v is None else self.v.copy(),
            None if self.head is None else self.head.copy(),
        )


class MirroredNet:
    """Mirrored pair of residual branches plus bookkeeping.

    version increments on every parameter update so caches can detect
    staleness.  classes is None in scalar mode, otherwise the number of
    output heads.
    """

    def __init__(self, branch1: BranchParams, branch2: BranchParams, m: int, d: int,
                 cfg: KernelConfig, seed: int, classes: int | None):
        self.branch1 = branch1
        self.branch2 = branch2
        self.m = m
        self.d = d
        self.cfg = cfg
        self.seed = seed
        self.classes = classes
        self.version = 0
        self.out_scale = 1.0 / math.sqrt(cfg.gradient_kernel_scale)

    @property
    def branches(self):
        return (self.branch1, self.branch2)

    @property
    def scalar_mode(self) -> bool:
        return self.classes is None


@dataclass
class ForwardCache:
    """Everything backward() needs for one input: per-branch activations
    alpha_0..alpha_L, hidden relu outputs, and the 0/1 preactivation signs."""

    x: np.ndarray
    alpha: list          # [branch][l] -> (m,) for l = 0..L
    relu: list           # [branch][l] -> (m,) for l = 1..L
    preact_signs: list   # [branch][l] -> (m,) float 0/1
    output: float | np.ndarray
    version: int


@dataclass
class GradientBundle:
    """Gradients of the combined network output f for one input.

    dW/dV are indexed [branch][layer] and include the mirror sign and
    output scale; delta/gamma/eta are the raw per-branch backward vectors.
    """

    dW: list
    dV: list
    delta: list
    gamma: list
    eta: list


@dataclass
class TrainRecord:
    step: int
    t: float
    train_loss: float
    label_err: float | None = None
    test_acc: float | None = None
    test_acc_alt: float | None = None
    probe_rnk: np.ndarray | None = None
    probe_rnk_dev: float | None = None
    probe_fn: np.ndarray | None = None
    probe_fn_dev: float | None = None


@dataclass
class TrainResult:
    records: list
    status: str                 # "ok" | "diverged"
    diverged_step: int | None
    steps_run: int
    lr: float
    loss: str


@dataclass
class ProbeSpec:
    """Optional per-checkpoint measurements during training.

    rnk_pairs: (P, 2, d) probe pairs for the empirical kernel; rnk_ref
    holds reference values to report deviations against.  fn_probes are
    inputs for function snapshots; fn_ref(t) returns reference predictions
    at flow time t.  eval_X/eval_y add classification accuracy tracking.
    """

    rnk_pairs: np.ndarray | None = None
    rnk_ref: np.ndarray | None = None
    fn_probes: np.ndarray | None = None
    fn_ref: object | None = None
    eval_X: np.ndarray | None = None
    eval_y: np.ndarray | None = None
    eval_y_alt: np.ndarray | None = None


def init_mirrored(m: int, d: int, cfg: KernelConfig, seed: int,
                  classes: int | None = None) -> MirroredNet:
    """Fresh mirrored network; branch 2 is a bit-exact copy of branch 1.

    Draw order (fixed for reproducibility): A, then W_l, V_l per layer,
    then v or the class head.
    """
    if m < 1:
        raise ValueError(f"width must be >= 1, got {m}")
    if d < 2:
        raise ValueError(f"input dimension must be >= 2, got {d}")
    if classes is not None and classes < 2:
        raise ValueError(f"classes must be >= 2 when given, got {classes}")
    rng = make_rng(seed, STREAM_INIT)
    L = cfg.depth
    A = rng.standard_normal((m, d))
    W = []
    V = []
    for _ in range(L):
        W.append(rng.standard_normal((m, m)))
        V.append(rng.standard_normal((m, m)))
    if classes is None:
        v = rng.standard_normal(m)
        head = None
    else:
        v = None
        head = rng.standard_normal((m, classes))
    b1 = BranchParams(A, W, V, v, head)
    return MirroredNet(b1, b1.copy(), m, d, cfg, seed, classes)


def _branch_forward(br: BranchParams, X: np.ndarray, a: float):
    """Batched forward through one branch.  X is (n, d); returns alphas
    (L+1 arrays of (n, m)), relus and signs (L arrays of (n, m))."""
    m = br.A.shape[0]
    alphas = [X @ br.A.T / math.sqrt(m)]
    relus = []
    signs = []
    c_in = math.sqrt(2.0 / m)
    c_res = a / math.sqrt(m)
    for W, V in zip(br.W, br.V):
        z = c_in * (alphas[-1] @ W.T)
        s = np.maximum(z, 0.0)
        relus.append(s)
        signs.append((z > 0.0).astype(np.float64))
        alphas.append(alphas[-1] + c_res * (s @ V.T))
    return alphas, relus, signs


def _branch_readout(br: BranchParams, alpha_L: np.ndarray) -> np.ndarray:
    if br.head is None:
        return alpha_L @ br.v
    return alpha_L @ br.head


def _branch_output_only(br: BranchParams, X: np.ndarray, a: float) -> np.ndarray:
    """Forward keeping only the running activation (for large probe batches)."""
    m = br.A.shape[0]
    alpha = X @ br.A.T / math.sqrt(m)
    c_in = math.sqrt(2.0 / m)
    c_res = a / math.sqrt(m)
    for W, V in zip(br.W, br.V):
        alpha = alpha + c_res * (np.maximum(c_in * (alpha @ W.T), 0.0) @ V.T)
    return _branch_readout(br, alpha)


def _net_output(net: MirroredNet, X: np.ndarray, chunk: int = 4096) -> np.ndarray:
    parts = []
    for lo in range(0, X.shape[0], chunk):
        Xc = X[lo:lo + chunk]
        o1 = _branch_output_only(net.branch1, Xc, net.cfg.scale)
        o2 = _branch_output_only(net.branch2, Xc, net.cfg.scale)
        parts.append(net.out_scale * _SQRT_HALF * (o1 - o2))
    return np.concatenate(parts, axis=0)


def forward(net: MirroredNet, x: np.ndarray) -> ForwardCache:
    """Forward pass for a single unit vector, retaining the cache."""
    X = check_unit_rows(np.asarray(x, dtype=np.float64).reshape(1, -1))
    if X.shape[1] != net.d:
        raise ValueError(f"dimension mismatch: input has d={X.shape[1]}, network expects {net.d}")
    alpha, relu, signs, outs = [], [], [], []
    for br in net.branches:
        al, re, sg = _branch_forward(br, X, net.cfg.scale)
        alpha.append([a[0] for a in al])
        relu.append([r[0] for r in re])
        signs.append([s[0] for s in sg])
        outs.append(_branch_readout(br, al[-1])[0])
    out = net.out_scale * _SQRT_HALF * (outs[0] - outs[1])
    return ForwardCache(x=X[0], alpha=alpha, relu=relu, preact_signs=signs,
                        output=out, version=net.version)


def _branch_backward_vectors(br: BranchParams, relus, signs, a: float, delta_L: np.ndarray):
    """Backward vectors for one branch from delta_L = dO/dalpha_L (n, m).

    Yields per layer l = L..1 the tuple (delta_l, gamma_l, eta_l) of
    (n, m) arrays and leaves delta at layer 0.
    """
    m = br.A.shape[0]
    delta = delta_L
    out = []
    for l in range(len(br.W) - 1, -1, -1):
        gamma = (math.sqrt(2.0) / m) * (delta @ br.V[l]) * signs[l]
        eta = relus[l] / math.sqrt(m)
        out.append((delta, gamma, eta))
        delta = delta + a * (gamma @ br.W[l])
    out.reverse()
    return out  # index l-1 -> (delta_l, gamma_l, eta_l)


def backward(net: MirroredNet, cache: ForwardCache) -> GradientBundle:
    """Gradients of the combined output for the cached input.

    Only W/V gradients exist; A and v (and the head) are frozen.  Raises
    if the cache predates the latest parameter update.
    """
    if cache.version != net.version:
        raise InvalidStateError("forward cache is stale: parameters changed since it was built")
    if not net.scalar_mode:
        raise ValueError("backward() gradients are defined for scalar-output mode")
    a = net.cfg.scale
    dW, dV, deltas, gammas, etas = [], [], [], [], []
    for p, br in enumerate(net.branches):
        sign = 1.0 if p == 0 else -1.0
        coef = sign * net.out_scale * _SQRT_HALF
        relus = [r.reshape(1, -1) for r in cache.relu[p]]
        signs = [s.reshape(1, -1) for s in cache.preact_signs[p]]
        vecs = _branch_backward_vectors(br, relus, signs, a, br.v.reshape(1, -1))
        dWp, dVp, dp, gp, ep = [], [], [], [], []
        for l, (delta, gamma, eta) in enumerate(vecs):
            alpha_prev = cache.alpha[p][l]
            dWp.append(coef * a * np.outer(gamma[0], alpha_prev))
            dVp.append(coef * a * np.outer(delta[0], eta[0]))
            dp.append(delta[0])
            gp.append(gamma[0])
            ep.append(eta[0])
        dW.append(dWp)
        dV.append(dVp)
        deltas.append(dp)
        gammas.append(gp)
        etas.append(ep)
    return GradientBundle(dW=dW, dV=dV, delta=deltas, gamma=gammas, eta=etas)


def _branch_rnk_features(br: BranchParams, X: np.ndarray, a: float):
    """Per-layer (alpha_prev, gamma, delta, eta) feature arrays for the
    rank-one kernel path, batched over the rows of X (scalar mode)."""
    alphas, relus, signs = _branch_forward(br, X, a)
    n = X.shape[0]
    delta_L = np.broadcast_to(br.v, (n, br.v.shape[0])).copy()
    vecs = _branch_backward_vectors(br, relus, signs, a, delta_L)
    return [(alphas[l], gamma, delta, eta) for l, (delta, gamma, eta) in enumerate(vecs)]


def empirical_rnk_matrix(net: MirroredNet, X1: np.ndarray, X2: np.ndarray | None = None,
                         per_branch: bool = False):
    """Empirical gradient kernel on row sets X1 x X2 (X2 defaults to X1).

    Uses the rank-one factorization layer by layer; cost is O(L (n1+n2) m)
    feature work plus O(L n1 n2 m) inner products, never O(m^2).
    """
    if not net.scalar_mode:
        raise ValueError("empirical kernel is defined for scalar-output mode")
    X1 = check_unit_rows(np.asarray(X1, dtype=np.float64))
    X2v = X1 if X2 is None else check_unit_rows(np.asarray(X2, dtype=np.float64))
    a = net.cfg.scale
    half_scale2 = 0.5 * net.out_scale ** 2
    branch_vals = []
    for br in net.branches:
        f1 = _branch_rnk_features(br, X1, a)
        f2 = f1 if X2 is None else _branch_rnk_features(br, X2v, a)
        acc = np.zeros((X1.shape[0], X2v.shape[0]))
        for (al1, ga1, de1, et1), (al2, ga2, de2, et2) in zip(f1, f2):
            acc += (ga1 @ ga2.T) * (al1 @ al2.T) + (de1 @ de2.T) * (et1 @ et2.T)
        branch_vals.append(a * a * acc)
    combined = half_scale2 * (branch_vals[0] + branch_vals[1])
    if per_branch:
        # Scaled so that each branch kernel estimates the analytic kernel on its own.
        return combined, (2.0 * half_scale2 * branch_vals[0], 2.0 * half_scale2 * branch_vals[1])
    return combined


def empirical_rnk(net: MirroredNet, x: np.ndarray, x2: np.ndarray) -> float:
    """Empirical kernel value for one pair of inputs."""
    X1 = np.asarray(x, dtype=np.float64).reshape(1, -1)
    X2 = np.asarray(x2, dtype=np.float64).reshape(1, -1)
    return float(empirical_rnk_matrix(net, X1, X2)[0, 0])


def empirical_rnk_pairs(net: MirroredNet, pairs: np.ndarray) -> np.ndarray:
    """Kernel values for an array of probe pairs, shape (P, 2, d)."""
    pairs = np.asarray(pairs, dtype=np.float64)
    P = pairs.shape[0]
    flat = pairs.reshape(2 * P, -1)
    full = empirical_rnk_matrix(net, flat)
    return np.array([full[2 * i, 2 * i + 1] for i in range(P)])


def network_function_snapshot(net: MirroredNet, probes: np.ndarray) -> np.ndarray:
    """Batched forward on probe rows; no caches retained."""
    probes = check_unit_rows(np.asarray(probes, dtype=np.float64))
    return _net_output(net, probes)


def _one_hot(y: np.ndarray, classes: int) -> np.ndarray:
    out = np.zeros((y.shape[0], classes))
    out[np.arange(y.shape[0]), y.astype(int)] = 1.0
    return out


def _softmax(F: np.ndarray) -> np.ndarray:
    Z = F - F.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def geometric_checkpoints(steps: int, pinned=()) -> list:
    """0, 1, 2, 4, ... doubling up to steps, plus pinned steps and steps itself."""
    marks = {0, steps}
    k = 1
    while k < steps:
        marks.add(k)
        k *= 2
    marks.update(int(p) for p in pinned if 0 <= int(p) <= steps)
    return sorted(marks)


def train_gd(net: MirroredNet, X: np.ndarray, y: np.ndarray, lr: float, steps: int,
             loss: str = "squared", checkpoints=None, probes: ProbeSpec | None = None) -> TrainResult:
    """Full-batch gradient descent on W/V of both branches.

    X: (n, d) unit rows; y: (n,) targets (class indices in class mode).
    Records a TrainRecord at every checkpoint step (geometric schedule by
    default).  Flow-time bookkeeping: t = step * lr.  A non-finite loss
    aborts with status "diverged" and the offending step index.
    """
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if loss not in ("squared", "cross_entropy"):
        raise ValueError(f"loss must be 'squared' or 'cross_entropy', got {loss!r}")
    if loss == "cross_entropy" and net.scalar_mode:
        raise ValueError("cross_entropy requires a class head")
    X = check_unit_rows(np.asarray(X, dtype=np.float64))
    y = np.asarray(y)
    n = X.shape[0]
    if y.shape[0] != n:
        raise ValueError(f"X has {n} rows but y has {y.shape[0]} entries")

    classify = not net.scalar_mode
    if classify:
        y_int = y.astype(int)
        Y = _one_hot(y_int, net.classes)
    else:
        Y = y.astype(np.float64)

    marks = set(checkpoints if checkpoints is not None else geometric_checkpoints(steps))
    marks.add(0)
    if steps > 0:
        marks.add(steps)

    a = net.cfg.scale
    mirror_coef = net.out_scale * _SQRT_HALF
    records: list = []
    status = "ok"
    diverged_step = None

    def loss_and_grad(F):
        # overflow to inf is fine here: it is exactly what the divergence
        # check below looks for
        with np.errstate(over="ignore"):
            if loss == "squared":
                R = F - Y
                return float(np.sum(R * R) / (2.0 * n)), R / n
            P = _softmax(F)
            ll = -np.log(np.clip(P[np.arange(n), y_int], 1e-300, None))
            return float(np.mean(ll)), (P - Y) / n

    def record(step: int, train_loss: float, F: np.ndarray):
        rec = TrainRecord(step=step, t=step * lr, train_loss=train_loss)
        if classify:
            rec.label_err = float(np.mean(np.argmax(F, axis=1) != y_int))
        if probes is not None:
            if probes.eval_X is not None:
                pred = np.argmax(_net_output(net, probes.eval_X), axis=1)
                rec.test_acc = float(np.mean(pred == probes.eval_y.astype(int)))
                if probes.eval_y_alt is not None:
                    rec.test_acc_alt = float(np.mean(pred == probes.eval_y_alt.astype(int)))
            if probes.rnk_pairs is not None:
                vals = empirical_rnk_pairs(net, probes.rnk_pairs)
                rec.probe_rnk = vals
                if probes.rnk_ref is not None:
                    rec.probe_rnk_dev = float(np.max(np.abs(vals - probes.rnk_ref)))
            if probes.fn_probes is not None:
                fn = network_function_snapshot(net, probes.fn_probes)
                rec.probe_fn = fn
                if probes.fn_ref is not None:
                    ref = probes.fn_ref(step * lr)
                    rec.probe_fn_dev = float(np.max(np.abs(fn - ref)))
        records.append(rec)

    for step in range(steps + 1):
        # forward on the training batch, branch by branch, keeping hidden state
        fw = []
        outs = []
        for br in net.branches:
            alphas, relus, signs = _branch_forward(br, X, a)
            fw.append((alphas, relus, signs))
            outs.append(_branch_readout(br, alphas[-1]))
        F = mirror_coef * (outs[0] - outs[1])
        if not classify:
            F = F.reshape(n)
        train_loss, G = loss_and_grad(F)

        if not math.isfinite(train_loss):
            status = "diverged"
            diverged_step = step
            record(step, train_loss, np.atleast_2d(F))
            break
        if step in marks:
            record(step, train_loss, F if classify else F.reshape(n, 1))
        if step == steps:
            break

        # dL/dalpha_L per branch, with mirror sign and scales folded in
        if classify:
            Gm = G
        else:
            Gm = G.reshape(n, 1)
        for p, br in enumerate(net.branches):
            sign = 1.0 if p == 0 else -1.0
            coef = sign * mirror_coef
            if br.head is None:
                delta_L = (coef * Gm) * br.v[None, :]
            else:
                delta_L = coef * (Gm @ br.head.T)
            alphas, relus, signs = fw[p]
            delta = delta_L
            for l in range(net.cfg.depth - 1, -1, -1):
                gamma = (math.sqrt(2.0) / net.m) * (delta @ br.V[l]) * signs[l]
                dW = a * (gamma.T @ alphas[l])
                dV = a * (delta.T @ (relus[l] / math.sqrt(net.m)))
                new_delta = delta + a * (gamma @ br.W[l])
                br.W[l] -= lr * dW
                br.V[l] -= lr * dV
                delta = new_delta
        net.version += 1

    return TrainResult(records=records, status=status, diverged_step=diverged_step,
                       steps_run=steps if status == "ok" else (diverged_step or 0),
                       lr=lr, loss=loss)


def save_checkpoint(net: MirroredNet, path_prefix: str, step: int, lr: float, loss: float) -> None:
    """Binary little-endian f64 parameter dump plus a JSON sidecar."""
    chunks = []
    shapes = []
    for p, br in enumerate(net.branches):
        mats = [("A", br.A)] + [(f"W{l}", w) for l, w in enumerate(br.W)] \
            + [(f"V{l}", v) for l, v in enumerate(br.V)]
        if br.v is not None:
            mats.append(("v", br.v))
        if br.head is not None:
            mats.append(("head", br.head))
        for name, arr in mats:
            chunks.append(np.ascontiguousarray(arr, dtype="<f8"))
            shapes.append({"branch": p + 1, "name": name, "shape": list(arr.shape)})
    with open(path_prefix + ".bin", "wb") as fh:
        for c in chunks:
            fh.write(c.tobytes(order="C"))
    sidecar = {
        "m": net.m, "d": net.d, "L": net.cfg.depth, "a": net.cfg.scale,
        "seed": net.seed, "step": step, "lr": lr, "loss": loss,
        "classes": net.classes, "layout": shapes, "dtype": "<f8",
    }
    with open(path_prefix + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path_prefix: str) -> MirroredNet:
    with open(path_prefix + ".json", "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    cfg = KernelConfig(sidecar["L"], sidecar["a"])
    raw = np.fromfile(path_prefix + ".bin", dtype="<f8")
    pos = 0
    branches = []
    per_branch: dict = {1: {}, 2: {}}
    for entry in sidecar["layout"]:
        size = int(np.prod(entry["shape"]))
        per_branch[entry["branch"]][entry["name"]] = raw[pos:pos + size].reshape(entry["shape"]).copy()
        pos += size
    if pos != raw.size:
        raise ValueError(f"{path_prefix}.bin: trailing data ({raw.size - pos} values)")
    L = sidecar["L"]
    for p in (1, 2):
        mats = per_branch[p]
        branches.append(BranchParams(
            mats["A"], [mats[f"W{l}"] for l in range(L)], [mats[f"V{l}"] for l in range(L)],
            mats.get("v"), mats.get("head")))
    net = MirroredNet(branches[0], branches[1], sidecar["m"], sidecar["d"], cfg,
                      sidecar["seed"], sidecar["classes"])
    return net
