"""Experiment orchestration: configs, manifests, runners, plot-data export.

An experiment is a pure function of its ExperimentConfig: result CSVs are
byte-identical across re-runs (floats serialized as shortest round-trip
decimals, rows sorted deterministically, per-cell RNG streams derived
from the declared seeds).  Each output directory carries a manifest
listing every emitted file with a sha256 checksum.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvalidStateError
from .flow import (FlowRegressor, early_stop_time, excess_risk_mc, flow_predict,
                   make_flow_regressor, sym_eig)
from .kernel import KernelConfig, rntk_gram, rntk_value
from .resnet import ProbeSpec, TrainResult, geometric_checkpoints, init_mirrored, train_gd
from .rng import GENERATOR_NAME, STREAM_TEST
from .sphere import (corrupt_labels, make_octant_dataset, make_rkhs_regression_set,
                     sample_uniform_sphere)
from .spectral import fit_decay, funk_hecke_mu, nystrom_check
from .stats import spearman

EXPERIMENTS = ("kernel_eval", "spectrum", "convergence", "rates", "corruption")

# Keys that do not influence results and are excluded from the config hash.
_NON_SEMANTIC_KEYS = ("out", "threads")


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_int_list(s: str) -> list:
    return [int(tok) for tok in s.split(",") if tok.strip() != ""]


def _parse_float_list(s: str) -> list:
    return [float(tok) for tok in s.split(",") if tok.strip() != ""]


def _parse_auto_float(s: str):
    return None if s.strip().lower() == "auto" else float(s)


def _fmt(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat, hashable experiment description.

    List-valued fields are comma-separated in the file format; lr and
    tstar_c accept the literal "auto" (stored as None) for data-driven
    defaults.  out and threads are execution details excluded from the
    config hash.
    """

    experiment: str = "kernel_eval"
    L: int = 2
    a: float = 0.5
    d: int = 3
    n: tuple = (32,)
    m: tuple = (64,)
    seeds: tuple = (0,)
    seeds_cap: str = ""
    lr: float | None = None
    steps: int = 256
    checkpoints: tuple = ()
    noise_sigma: float = 0.5
    corruption_p: tuple = (0.0,)
    probe_pairs: int = 10
    probe_points: int = 50
    k_centers: int = 20
    n_mc: int = 2000
    test_n: int = 10000
    test_corrupt_same_p: bool = True
    k_max: int = 64
    quad_nodes: int = 256
    nystrom_n: int = 2000
    tstar_c: float | None = None
    t_sweep: bool = False
    loss: str = "squared"
    classes: int = 8
    data_seed: int = 1000003
    out: str = "results"
    threads: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        for name in ("n", "m", "seeds", "corruption_p"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"list field {name!r} must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if self.loss not in ("squared", "cross_entropy"):
            raise ValueError(f"loss must be squared or cross_entropy, got {self.loss!r}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")

    @property
    def kernel(self) -> KernelConfig:
        return KernelConfig(self.L, self.a)

    def seed_cap_for(self, m: int) -> int:
        if not self.seeds_cap:
            return len(self.seeds)
        for part in self.seeds_cap.split(";"):
            key, _, val = part.partition(":")
            if key.strip() and int(key) == m:
                return int(val)
        return len(self.seeds)

    def to_text(self) -> str:
        lines = []
        for f in sorted(dataclasses.fields(self), key=lambda f: f.name):
            lines.append(f"{f.name} = {_fmt(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        lines = [ln for ln in self.to_text().splitlines()
                 if ln.split(" = ")[0] not in _NON_SEMANTIC_KEYS]
        return hashlib.sha256(("\n".join(lines) + "\n").encode("utf-8")).hexdigest()


_PARSERS = {
    "experiment": str, "L": int, "a": float, "d": int,
    "n": _parse_int_list, "m": _parse_int_list, "seeds": _parse_int_list,
    "seeds_cap": str, "lr": _parse_auto_float, "steps": int,
    "checkpoints": _parse_int_list, "noise_sigma": float,
    "corruption_p": _parse_float_list, "probe_pairs": int, "probe_points": int,
    "k_centers": int, "n_mc": int, "test_n": int,
    "test_corrupt_same_p": _parse_bool, "k_max": int, "quad_nodes": int,
    "nystrom_n": int, "tstar_c": _parse_auto_float, "t_sweep": _parse_bool,
    "loss": str, "classes": int, "data_seed": int, "out": str, "threads": int,
}
_LIST_KEYS = {"n", "m", "seeds", "checkpoints", "corruption_p"}


def parse_config_text(text: str) -> dict:
    """key = value lines; '#' starts a comment; blank lines ignored."""
    raw: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        raw[key.strip()] = value.strip()
    return raw


def config_from_sources(file_text: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Build a config from an optional file plus CLI-style overrides."""
    raw: dict = {}
    if file_text is not None:
        raw.update(parse_config_text(file_text))
    if overrides:
        raw.update({k: str(v) for k, v in overrides.items()})
    kwargs = {}
    for key, value in raw.items():
        if key not in _PARSERS:
            raise ValueError(f"unknown config key {key!r}")
        parsed = _PARSERS[key](value)
        if key in _LIST_KEYS:
            parsed = tuple(parsed)
        kwargs[key] = parsed
    return ExperimentConfig(**kwargs)


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: list, rows: list) -> None:
    """UTF-8, LF endings, shortest round-trip decimals."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class RunContext:
    """Accumulates output files and run records for the manifest."""

    def __init__(self, cfg: ExperimentConfig, out_dir: str | Path):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.started_at = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
        self.runs: list = []
        self._t0 = time.time()

    def record_run(self, **info) -> None:
        self.runs.append(info)

    def finalize(self, extra: dict | None = None) -> dict:
        files = {}
        for p in sorted(self.out.rglob("*")):
            if p.is_file() and p.name != "manifest.json":
                files[str(p.relative_to(self.out))] = _sha256(p)
        manifest = {
            "config_hash": self.cfg.config_hash(),
            "config": self.cfg.to_text(),
            "tool_version": __version__,
            "rng_algorithm": GENERATOR_NAME,
            "started_at": self.started_at,
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
            "wall_seconds": round(time.time() - self._t0, 3),
            "experiment": self.cfg.experiment,
            "runs": self.runs,
            "files": files,
        }
        if extra:
            manifest.update(extra)
        with open(self.out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return manifest


def _limit_blas_threads():
    """Keep workers from oversubscribing cores (no-op without threadpoolctl)."""
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(1)
    except ImportError:
        pass


def _pmap(fn, jobs: list, threads: int) -> list:
    """Map fn over argument tuples, optionally in a process pool.

    Results come back in job order regardless of scheduling, so output
    files are byte-identical for any thread count.
    """
    if threads <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=min(threads, len(jobs)),
                             initializer=_limit_blas_threads) as ex:
        return list(ex.map(fn, *zip(*jobs)))


def _loglog_slope(xs, ys):
    """Plain OLS slope of log y on log x; None if fewer than two points."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    keep = ys > 0
    if keep.sum() < 2 or np.unique(xs[keep]).size < 2:
        return None
    lx, ly = np.log(xs[keep]), np.log(ys[keep])
    lx0 = lx - lx.mean()
    return float(np.sum(lx0 * ly) / np.sum(lx0 * lx0))


def _fit_to_dict(fit) -> dict | None:
    if fit is None:
        return None
    return {"slope": fit.slope, "stderr": fit.stderr, "window": list(fit.window),
            "ci": [fit.ci_low, fit.ci_high], "n_points": fit.n_points}


def _auto_lr(G: np.ndarray, n: int, frac: float = 0.9) -> float:
    """Step size frac * 2n / lambda_max(G): stable for function-space GD."""
    lam_max = float(np.linalg.eigvalsh(G)[-1])
    return frac * 2.0 * n / lam_max


def _traj_rows(result: TrainResult) -> list:
    return [[r.step, r.t, r.train_loss, r.label_err, r.probe_rnk_dev, r.probe_fn_dev]
            for r in result.records]


_TRAJ_HEADER = ["step", "t", "train_loss", "label_err", "probe_rnk_dev", "probe_fn_dev"]


# --------------------------------------------------------------------------
# convergence: finite-width kernels and dynamics vs their analytic limits
# --------------------------------------------------------------------------

def _convergence_cell(cfg: ExperimentConfig, m: int, seed: int, X, y,
                      pairs, rnk_ref, fn_probes, reg: FlowRegressor, lr: float) -> dict:
    probes = ProbeSpec(rnk_pairs=pairs, rnk_ref=rnk_ref, fn_probes=fn_probes,
                       fn_ref=lambda t: flow_predict(reg, t, fn_probes))
    net = init_mirrored(m, cfg.d, cfg.kernel, seed)
    res = train_gd(net, X, y, lr=lr, steps=cfg.steps, loss="squared",
                   checkpoints=geometric_checkpoints(cfg.steps, cfg.checkpoints),
                   probes=probes)
    ok = res.status == "ok"
    rnk0 = res.records[0].probe_rnk
    drift = max(float(np.max(np.abs(r.probe_rnk - rnk0))) for r in res.records) if ok else None
    return {
        "m": m, "seed": seed, "status": res.status,
        "dev_init": res.records[0].probe_rnk_dev,
        "dev_kernel": max(r.probe_rnk_dev for r in res.records) if ok else None,
        "dev_fn": max(r.probe_fn_dev for r in res.records) if ok else None,
        "dev_drift": drift,
        "steps_executed": res.steps_run, "diverged_step": res.diverged_step,
        "traj": _traj_rows(res),
    }


def run_convergence(cfg: ExperimentConfig, out_dir: str | Path) -> dict:
    """Width sweep measuring, per (m, seed):

      dev_init:   max over probe pairs |empirical kernel - analytic| at step 0,
      dev_kernel: sup over checkpoints of the same max (includes step 0),
      dev_fn:     sup over checkpoints of max over probes
                  |network function - closed-form flow prediction at t = step lr|.

    The dataset, probe pairs and probe points are fixed across all runs;
    seeds vary only the network initialization.
    """
    ctx = RunContext(cfg, out_dir)
    kernel = cfg.kernel
    d = cfg.d
    n = cfg.n[0]
    ds, _target = make_rkhs_regression_set(n, d, kernel, cfg.k_centers, cfg.noise_sigma, cfg.data_seed)
    reg = make_flow_regressor(ds.X, ds.y, kernel)

    pair_pts = sample_uniform_sphere(2 * cfg.probe_pairs, d, cfg.data_seed + 1).X
    pairs = pair_pts.reshape(cfg.probe_pairs, 2, d)
    rnk_ref = np.array([rntk_value(p[0], p[1], kernel) for p in pairs])
    fn_probes = sample_uniform_sphere(cfg.probe_points, d, cfg.data_seed + 2).X

    G = (reg.eig.eigenvectors * reg.eig.eigenvalues) @ reg.eig.eigenvectors.T
    lr = cfg.lr if cfg.lr is not None else _auto_lr(G, n, frac=0.25)

    jobs = [(cfg, m, seed, ds.X, ds.y, pairs, rnk_ref, fn_probes, reg, lr)
            for m in cfg.m for seed in cfg.seeds[: cfg.seed_cap_for(m)]]
    rows = []
    for cell in _pmap(_convergence_cell, jobs, cfg.threads):
        write_csv(ctx.out / f"traj_m{cell['m']}_s{cell['seed']}.csv", _TRAJ_HEADER, cell["traj"])
        rows.append([cell["m"], cell["seed"], cell["status"], cell["dev_init"],
                     cell["dev_kernel"], cell["dev_fn"], cell["dev_drift"]])
        ctx.record_run(m=cell["m"], seed=cell["seed"], status=cell["status"],
                       steps_planned=cfg.steps, steps_executed=cell["steps_executed"],
                       diverged_step=cell["diverged_step"])
    rows.sort(key=lambda r: (r[0], r[1]))
    write_csv(ctx.out / "runs.csv",
              ["m", "seed", "status", "dev_init", "dev_kernel", "dev_fn", "dev_drift"], rows)

    med_rows = []
    for m in cfg.m:
        good = [r for r in rows if r[0] == m and r[2] == "ok"]
        if good:
            med_rows.append([m, len(good),
                             float(np.median([r[3] for r in good])),
                             float(np.median([r[4] for r in good])),
                             float(np.median([r[5] for r in good])),
                             float(np.median([r[6] for r in good]))])
    write_csv(ctx.out / "medians.csv",
              ["m", "count", "median_dev_init", "median_dev_kernel", "median_dev_fn",
               "median_dev_drift"], med_rows)

    ms = [r[0] for r in med_rows]
    slopes = {
        "dev_init": _loglog_slope(ms, [r[2] for r in med_rows]),
        "dev_kernel": _loglog_slope(ms, [r[3] for r in med_rows]),
        "dev_fn": _loglog_slope(ms, [r[4] for r in med_rows]),
        "lr": lr, "steps": cfg.steps,
    }
    with open(ctx.out / "slopes.json", "w", encoding="utf-8") as fh:
        json.dump(slopes, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ctx.finalize({"lr": lr})


# --------------------------------------------------------------------------
# rates: early-stopped vs interpolated excess risk over n
# --------------------------------------------------------------------------

def _rates_cell(cfg: ExperimentConfig, n: int, seed: int, c_star: float):
    kernel = cfg.kernel
    ds, target = make_rkhs_regression_set(n, cfg.d, kernel, cfg.k_centers, cfg.noise_sigma, seed)
    reg = make_flow_regressor(ds.X, ds.y, kernel)
    t_star = early_stop_time(n, cfg.d, c_star)
    out = []
    est = excess_risk_mc(lambda P: flow_predict(reg, t_star, P), target, cfg.n_mc, seed, cfg.d)
    out.append([n, seed, t_star, est.value, est.std_error, "early_stop"])
    est_inf = excess_risk_mc(lambda P: flow_predict(reg, math.inf, P), target, cfg.n_mc, seed, cfg.d)
    out.append([n, seed, math.inf, est_inf.value, est_inf.std_error, "interpolate"])
    if cfg.t_sweep:
        for mult in (2.0 ** k for k in range(-4, 5)):
            t = t_star * mult
            est_s = excess_risk_mc(lambda P: flow_predict(reg, t, P), target, cfg.n_mc, seed, cfg.d)
            out.append([n, seed, t, est_s.value, est_s.std_error, "sweep"])
    return out


def _calibrate_tstar_c(cfg: ExperimentConfig, n_ref: int) -> float:
    """One-time grid search for the stopping-time constant at the smallest n."""
    grid = np.exp(np.linspace(math.log(0.05), math.log(50.0), 16))
    regs = []
    for seed in cfg.seeds:
        ds, target = make_rkhs_regression_set(n_ref, cfg.d, cfg.kernel, cfg.k_centers,
                                              cfg.noise_sigma, seed)
        regs.append((make_flow_regressor(ds.X, ds.y, cfg.kernel), target, seed))
    best_c, best_risk = None, math.inf
    for c in grid:
        t = early_stop_time(n_ref, cfg.d, float(c))
        risks = [excess_risk_mc(lambda P: flow_predict(reg, t, P), target, cfg.n_mc, seed, cfg.d).value
                 for reg, target, seed in regs]
        med = float(np.median(risks))
        if med < best_risk:
            best_c, best_risk = float(c), med
    return best_c


def run_rates(cfg: ExperimentConfig, out_dir: str | Path) -> dict:
    """Excess risk of the closed-form flow at the early-stopping time and
    in the interpolation limit, across sample sizes."""
    ctx = RunContext(cfg, out_dir)
    ns = sorted(cfg.n)
    c_star = cfg.tstar_c if cfg.tstar_c is not None else _calibrate_tstar_c(cfg, ns[0])
    jobs = [(cfg, n, seed, c_star) for n in ns for seed in cfg.seeds]
    rows = []
    for (_, n, seed, _c), cell_rows in zip(jobs, _pmap(_rates_cell, jobs, cfg.threads)):
        rows.extend(cell_rows)
        ctx.record_run(n=n, seed=seed, status="ok", steps_planned=0, steps_executed=0)
    rows.sort(key=lambda r: (r[0], r[1], r[5], r[2]))
    write_csv(ctx.out / "risk_curve.csv", ["n", "seed", "t", "risk", "std_error", "mode"], rows)

    med = {}
    for mode in ("early_stop", "interpolate"):
        med[mode] = [(n, float(np.median([r[3] for r in rows if r[0] == n and r[5] == mode])))
                     for n in ns]
    med_rows = [[n, med["early_stop"][i][1], med["interpolate"][i][1]] for i, n in enumerate(ns)]
    write_csv(ctx.out / "medians.csv", ["n", "median_risk_early_stop", "median_risk_interpolate"], med_rows)
    slopes = {
        "early_stop": _loglog_slope(ns, [v for _, v in med["early_stop"]]),
        "interpolate": _loglog_slope(ns, [v for _, v in med["interpolate"]]),
        "tstar_c": c_star,
        "target_exponent": -cfg.d / (2.0 * cfg.d - 1.0),
    }
    with open(ctx.out / "slopes.json", "w", encoding="utf-8") as fh:
        json.dump(slopes, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ctx.finalize({"tstar_c": c_star})


# --------------------------------------------------------------------------
# corruption: label-noise classification on S^2
# --------------------------------------------------------------------------

def _corruption_cell(cfg: ExperimentConfig, p: float, seed: int, lr: float):
    kernel = cfg.kernel
    n = cfg.n[0]
    m = cfg.m[0]
    train = corrupt_labels(make_octant_dataset(n, seed), p, seed)
    test = make_octant_dataset(cfg.test_n, seed + 500000, stream=STREAM_TEST)
    clean_test_y = test.clean_y
    if cfg.test_corrupt_same_p and p > 0:
        test = corrupt_labels(test, p, seed + 500000)
    net = init_mirrored(m, 3, kernel, seed, classes=cfg.classes)
    # primary accuracy follows the configured test-label convention; the
    # clean-label accuracy is always reported alongside it
    probes = ProbeSpec(eval_X=test.X, eval_y=test.y, eval_y_alt=clean_test_y)
    res = train_gd(net, train.X, train.y, lr=lr, steps=cfg.steps, loss=cfg.loss,
                   checkpoints=geometric_checkpoints(cfg.steps, cfg.checkpoints), probes=probes)

    recs = res.records
    accs = np.array([r.test_acc for r in recs], dtype=np.float64)
    errs = np.array([r.label_err for r in recs], dtype=np.float64)
    ts = np.array([r.t for r in recs])

    i_opt = int(np.argmax(accs))  # argmax, ties resolved to the earliest checkpoint
    label_hits = np.nonzero(errs == 0.0)[0]
    reached = label_hits.size > 0
    i_label = int(label_hits[0]) if reached else len(recs) - 1
    return {
        "p": p, "seed": seed, "status": res.status,
        "t_opt": float(ts[i_opt]), "acc_opt": float(accs[i_opt]),
        "t_label": float(ts[i_label]), "acc_label": float(accs[i_label]),
        "t_label_reached": bool(reached),
        "gap": float(ts[i_label] - ts[i_opt]),
        "final_label_err": float(errs[-1]),
        "steps_executed": res.steps_run,
        "records": [[r.step, r.t, r.train_loss, r.label_err, r.test_acc, r.test_acc_alt]
                    for r in recs],
    }


def run_corruption(cfg: ExperimentConfig, out_dir: str | Path) -> dict:
    """Octant-label classification under label corruption: tracks the optimal
    stopping time t_opt (peak test accuracy) against t_label (first checkpoint
    with zero training label error; budget-censored when never reached)."""
    if cfg.d != 3:
        raise ValueError("the corruption experiment is defined on S^2 (d = 3)")
    ctx = RunContext(cfg, out_dir)
    n = cfg.n[0]
    lr = cfg.lr if cfg.lr is not None else _auto_lr(
        rntk_gram(make_octant_dataset(n, cfg.data_seed).X, cfg.kernel), n, frac=0.9)

    jobs = [(cfg, p, seed, lr) for p in cfg.corruption_p for seed in cfg.seeds]
    cells = []
    for cell in _pmap(_corruption_cell, jobs, cfg.threads):
        cells.append(cell)
        write_csv(ctx.out / f"acc_p{_cell(cell['p'])}_s{cell['seed']}.csv",
                  ["step", "t", "train_loss", "label_err", "test_acc", "test_acc_clean"],
                  cell["records"])
        ctx.record_run(p=cell["p"], seed=cell["seed"], status=cell["status"],
                       steps_planned=cfg.steps, steps_executed=cell["steps_executed"])

    cells.sort(key=lambda c: (c["p"], c["seed"]))
    sum_rows = [[c["p"], c["seed"], c["status"], c["t_opt"], c["acc_opt"], c["t_label"],
                 c["acc_label"], c["t_label_reached"], c["gap"]] for c in cells]
    write_csv(ctx.out / "summary.csv",
              ["p", "seed", "status", "t_opt", "acc_opt", "t_label", "acc_label",
               "t_label_reached", "gap"], sum_rows)

    agg_rows = []
    for p in cfg.corruption_p:
        sub = [c for c in cells if c["p"] == p and c["status"] == "ok"]
        if not sub:
            continue
        gaps = np.array([c["gap"] for c in sub])
        acc_gap = np.array([c["acc_opt"] - c["acc_label"] for c in sub])
        agg_rows.append([p, len(sub), float(np.mean(gaps)), float(np.std(gaps)),
                         float(np.median(gaps)), float(np.mean(acc_gap)),
                         float(np.median(acc_gap)),
                         sum(1 for c in sub if not c["t_label_reached"])])
    write_csv(ctx.out / "aggregate.csv",
              ["p", "count", "gap_mean", "gap_std", "gap_median", "acc_gap_mean",
               "acc_gap_median", "censored"], agg_rows)

    stats = {"lr": lr}
    if len(agg_rows) >= 3:
        stats["spearman_p_gap"] = spearman(np.array([r[0] for r in agg_rows]),
                                           np.array([r[4] for r in agg_rows]))
    with open(ctx.out / "aggregate.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ctx.finalize({"lr": lr})


# --------------------------------------------------------------------------
# spectrum
# --------------------------------------------------------------------------

def run_spectrum(cfg: ExperimentConfig, out_dir: str | Path) -> dict:
    """Frequency eigenvalues, flattened spectrum, decay slopes, and an
    independent finite-sample cross-check of the leading eigenvalues."""
    ctx = RunContext(cfg, out_dir)
    prof = funk_hecke_mu(cfg.kernel, cfg.d, cfg.k_max, cfg.quad_nodes)
    write_csv(ctx.out / "spectrum.csv", ["k", "N", "mu"],
              [[k, int(prof.mult[k]), float(prof.mu[k])] for k in range(cfg.k_max + 1)])
    write_csv(ctx.out / "lambda.csv", ["j", "lambda"],
              [[j + 1, float(v)] for j, v in enumerate(prof.lambda_flat)])
    report = {
        "trace_partial": prof.trace_partial,
        "quad_nodes_used": prof.quad_nodes_used,
        "mu_fit": _fit_to_dict(prof.slope_mu),
        "lambda_fit": _fit_to_dict(prof.slope_lambda),
        "mu_target": -float(cfg.d),
        "lambda_target": -cfg.d / (cfg.d - 1.0),
    }
    if cfg.nystrom_n >= 200:
        top = nystrom_check(cfg.kernel, cfg.d, cfg.nystrom_n, cfg.seeds[0])
        write_csv(ctx.out / "nystrom.csv", ["rank", "nystrom_value", "quadrature_value"],
                  [[i + 1, float(top[i]), float(prof.lambda_flat[i])] for i in range(len(top))])
    with open(ctx.out / "slopes.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    ctx.record_run(status="ok", steps_planned=0, steps_executed=0)
    return ctx.finalize()


# --------------------------------------------------------------------------
# plot-data emission
# --------------------------------------------------------------------------

_PLOT_HEADER = ["experiment", "param", "seed", "x", "y"]


def emit_plotdata(results_dir: str | Path) -> list:
    """Write tidy long-format CSVs for a completed run directory.

    Idempotent: re-emission produces byte-identical files.  Raises
    InvalidStateError when the directory has no manifest.
    """
    out = Path(results_dir)
    manifest_path = out / "manifest.json"
    if not manifest_path.exists():
        raise InvalidStateError(f"{out}: no manifest.json; not a completed run directory")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    experiment = manifest.get("experiment", "unknown")
    plot_dir = out / "plot"
    written = []

    def emit(name: str, rows: list) -> None:
        path = plot_dir / name
        write_csv(path, _PLOT_HEADER, rows)
        written.append(str(path))

    def read_csv(name: str) -> list:
        path = out / name
        if not path.exists():
            return []
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh]
        header = lines[0].split(",")
        return [dict(zip(header, ln.split(","))) for ln in lines[1:] if ln]

    if experiment == "convergence":
        rows = read_csv("runs.csv")
        for kind in ("dev_init", "dev_kernel", "dev_fn"):
            emit(f"plot_{kind}.csv",
                 [[experiment, r["m"], r["seed"], r["m"], r[kind]]
                  for r in rows if r["status"] == "ok" and r[kind] != ""])
    elif experiment == "rates":
        rows = read_csv("risk_curve.csv")
        for mode in ("early_stop", "interpolate", "sweep"):
            emit(f"plot_risk_{mode}.csv",
                 [[experiment, r["mode"], r["seed"], r["n"], r["risk"]]
                  for r in rows if r["mode"] == mode])
    elif experiment == "corruption":
        rows = read_csv("summary.csv")
        emit("plot_gap.csv", [[experiment, r["p"], r["seed"], r["p"], r["gap"]] for r in rows])
        emit("plot_acc.csv",
             [[experiment, r["p"], r["seed"], r["p"],
               repr(float(r["acc_opt"]) - float(r["acc_label"]))] for r in rows])
    elif experiment == "spectrum":
        emit("plot_mu.csv", [[experiment, "mu", 0, r["k"], r["mu"]] for r in read_csv("spectrum.csv")])
        emit("plot_lambda.csv",
             [[experiment, "lambda", 0, r["j"], r["lambda"]] for r in read_csv("lambda.csv")])
    else:
        pass  # nothing known to emit; still produce the empty marker below

    if not written:
        emit("plot_empty.csv", [])

    # keep the manifest's file inventory complete, including plot data
    files = dict(manifest.get("files", {}))
    for p in written:
        rel = str(Path(p).relative_to(out))
        files[rel] = _sha256(Path(p))
    manifest["files"] = files
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return written


RUNNERS = {
    "convergence": run_convergence,
    "rates": run_rates,
    "corruption": run_corruption,
    "spectrum": run_spectrum,
}
