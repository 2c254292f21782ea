"""Command-line front end.

    rntk-lab kernel-eval --x 1,0,0 --x2 0,1,0 --L 2 --a 0.5 [--trace]
    rntk-lab spectrum    [--config FILE] [--out DIR] [--key value ...]
    rntk-lab convergence [...]
    rntk-lab rates       [...]
    rntk-lab corruption  [...]
    rntk-lab emit-plotdata RESULTS_DIR

Global flags: --config (flat key = value file), --out, --seed (shorthand
for seeds=SEED), --threads (default from RNTK_LAB_THREADS).  Any other
--key value pair overrides the matching config key.

Exit codes: 0 success, 2 invalid configuration or arguments,
3 numerical failure, 4 at least one run diverged.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import DivergedError, InvalidStateError, NumericalError
from .harness import RUNNERS, config_from_sources, emit_plotdata
from .kernel import KernelConfig, rntk_eval

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_DIVERGED = 4

_RUN_COMMANDS = {"spectrum": "spectrum", "convergence": "convergence",
                 "rates": "rates", "corruption": "corruption"}


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--seed", type=int, help="shorthand for seeds=SEED")
    common.add_argument("--threads", type=int,
                        default=int(os.environ.get("RNTK_LAB_THREADS", "0")) or None,
                        help="worker processes for independent run cells")

    parser = argparse.ArgumentParser(prog="rntk-lab", description=__doc__, parents=[common],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    ke = sub.add_parser("kernel-eval", parents=[common],
                        help="evaluate the analytic kernel for one pair")
    ke.add_argument("--x", required=True, help="comma-separated unit vector")
    ke.add_argument("--x2", required=True, help="comma-separated unit vector")
    ke.add_argument("--L", type=int, default=2)
    ke.add_argument("--a", type=float, default=0.5)
    ke.add_argument("--trace", action="store_true", help="print the full recursion trace as JSON")

    for name in _RUN_COMMANDS:
        sub.add_parser(name, parents=[common], help=f"run the {name} experiment")

    ep = sub.add_parser("emit-plotdata", parents=[common],
                        help="write tidy plot CSVs for a finished run")
    ep.add_argument("results_dir")
    return parser


def _kernel_eval(args) -> int:
    x = np.array([float(t) for t in args.x.split(",")])
    x2 = np.array([float(t) for t in args.x2.split(",")])
    trace = rntk_eval(x, x2, KernelConfig(args.L, args.a))
    if args.trace:
        print(json.dumps({"u": trace.u, "K": list(trace.K), "B": list(trace.B),
                          "value": trace.value}, indent=2))
    else:
        print(repr(trace.value))
    return EXIT_OK


def _run_experiment(args, overrides: dict) -> int:
    file_text = None
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            file_text = fh.read()
    overrides = dict(overrides)
    overrides["experiment"] = _RUN_COMMANDS[args.command]
    if args.seed is not None:
        overrides["seeds"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = args.out
    if args.threads is not None:
        overrides["threads"] = str(args.threads)
    cfg = config_from_sources(file_text, overrides)
    manifest = RUNNERS[cfg.experiment](cfg, cfg.out)
    n_div = sum(1 for r in manifest["runs"] if r.get("status") == "diverged")
    print(f"{cfg.experiment}: {len(manifest['runs'])} runs "
          f"({n_div} diverged) -> {cfg.out} [config {manifest['config_hash'][:12]}]")
    return EXIT_DIVERGED if n_div else EXIT_OK


_VALUE_FLAGS = {"--config", "--out", "--seed", "--threads", "--x", "--x2", "--L", "--a"}
_BARE_FLAGS = {"--trace", "-h", "--help"}


def _split_overrides(argv: list) -> tuple:
    """Peel off unknown --key value pairs so argparse sees only known flags.

    Known value flags are re-joined as --flag=value so vectors with a
    leading minus sign parse cleanly.
    """
    rest, overrides = [], {}
    i = 0
    while i < len(argv):
        tok = argv[i]
        if not tok.startswith("--") or tok in _BARE_FLAGS:
            rest.append(tok)
            i += 1
            continue
        name, eq, inline = tok.partition("=")
        if eq:
            value, consumed = inline, 1
        else:
            if i + 1 >= len(argv):
                raise ValueError(f"flag {tok} expects a value")
            value, consumed = argv[i + 1], 2
        if name in _VALUE_FLAGS:
            rest.append(f"{name}={value}")
        else:
            overrides[name[2:].replace("-", "_")] = value
        i += consumed
    return rest, overrides


def main(argv: list | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        rest, overrides = _split_overrides(argv)
        args = _build_parser().parse_args(rest)
        if args.command == "kernel-eval":
            if overrides:
                raise ValueError(f"kernel-eval takes no config overrides: {sorted(overrides)}")
            return _kernel_eval(args)
        if args.command == "emit-plotdata":
            written = emit_plotdata(args.results_dir)
            print(f"emitted {len(written)} plot files under {args.results_dir}")
            return EXIT_OK
        return _run_experiment(args, overrides)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidStateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DivergedError as exc:
        print(f"diverged at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
