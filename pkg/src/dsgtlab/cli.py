"""Command-line interface: ``dsgtlab {run, sweep, spectra, bound, validate}``.

Exit codes: 0 success, 1 usage error, 2 validation failure (bad config,
matrix or topology file).
"""

from __future__ import annotations

import argparse
import math
import sys
import warnings
from pathlib import Path

from .algorithms import StepSchedule, d2_companion, theorem_cap
from .config import ConfigError, parse_config, with_value
from .engine import SWEEP_AXES, run_experiment, run_sweep
from .metrics import corollary_bound, make_bound_constants, theorem1_bound
from .problems import ProblemError
from .topology import (
    FIXTURE3_MATRIX,
    MixingError,
    TopologyError,
    build_topology,
    load_mixing,
    read_matrix,
    read_topology,
)

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_USAGE, EXIT_INVALID = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _matrix(arg: str):
    return FIXTURE3_MATRIX.copy() if arg == "fixture3" else read_matrix(arg)


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.output:
        cfg = with_value(cfg, "run.output", str(Path(args.output).resolve()))
    s = run_experiment(cfg, threads=args.threads)
    a = s.aggregate
    print(f"verdict={a['verdict']} seeds={a['seeds']} diverged_seeds={a['diverged_seeds']}")
    for r in s.seeds:
        m = r.summary
        tail = f" diverged_at={m['diverged_at']}" if m["diverged"] else ""
        print(f"seed={r.seed} final_R={m['final_running_R']!r} consensus_err={m['final_consensus_err']!r} "
              f"loss={m['final_loss']!r}{tail}")
    print(f"output={s.output}")
    if not args.no_plot:
        from .report import plot_run

        print(f"figure={plot_run(s)}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = parse_config(args.config)
    if args.output:
        cfg = with_value(cfg, "run.output", str(Path(args.output).resolve()))
    raw = [v.strip() for v in args.values.split(",") if v.strip()]
    values = raw if args.axis == "topology" else [int(v) if args.axis in ("K", "n") else float(v) for v in raw]
    summaries, table = run_sweep(cfg, args.axis, values, threads=args.threads)
    for row in table:
        print(" ".join(f"{k}={row[k]}" for k in ("axis", "value", "final_R_mean", "iters_to_eps_mean", "speedup")))
    root = Path(cfg.run.output)
    print(f"table={root / 'sweep.csv'}")
    if not args.no_plot:
        from .report import plot_sweep

        print(f"figure={plot_sweep(summaries, table, root / 'sweep.png')}")
    return EXIT_OK


def _cmd_spectra(args) -> int:
    w = _matrix(args.matrix)
    topo = read_topology(args.topology) if args.topology else build_topology("complete", w.shape[0])
    W = load_mixing(w, topo)
    comp = d2_companion(W, args.gamma)
    print(f"rho={W.rho!r}")
    print(f"companion_radius={comp.spectral_radius!r}")
    print(f"consensus_free_radius={comp.consensus_free_radius!r}")
    print(f"d2_diverges={'yes' if comp.spectral_radius >= 1 + 1e-9 else 'no'}")
    return EXIT_OK


def _cmd_bound(args) -> int:
    if args.gamma is not None and args.a is not None:
        raise _UsageError("give either --gamma or --a, not both")
    cap = theorem_cap(args.rho, args.eta, args.L, args.n, args.lam)
    if args.a is not None:
        sched = StepSchedule.diminishing(args.a, args.p)
    else:
        sched = StepSchedule.constant(cap if args.gamma is None else args.gamma)
    c = make_bound_constants(args.rho, args.eta, args.n, args.L, args.sigma_s_sq, args.f_gap,
                             args.consensus1, args.tracker_dev1, sched.first, lam=args.lam)
    b = theorem1_bound(c, sched, args.K)
    print(f"cap={cap!r}")
    print(f"gamma1={sched.first!r}")
    print(f"theta={c.theta!r} C={c.C!r} D={c.D!r}")
    print(f"theorem_bound={b.value!r} within_hypothesis={'yes' if b.valid else 'no'}")
    if sched.kind == "constant":
        cb = corollary_bound(c, "constant", gamma0=sched.gamma0, K=args.K)
        print(f"corollary_constant={cb.value!r}")
        if args.sigma_s_sq > 0 and c.D > 0:
            tb = corollary_bound(c, "tuned", K=args.K)
            print(f"corollary_tuned={tb.value!r} k_threshold_met={'yes' if tb.valid else 'no'}")
    elif args.K >= 2:
        db = corollary_bound(c, "diminishing", a=args.a, p=args.p, k=args.K)
        print(f"corollary_diminishing={db.value!r}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    w = _matrix(args.matrix)
    topo = read_topology(args.topology)
    W = load_mixing(w, topo)
    print(f"ok n={W.n} rho={W.rho!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dsgtlab", description="Decentralized stochastic gradient tracking laboratory.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    r = sub.add_parser("run", help="run an experiment from a config file")
    r.add_argument("config")
    r.add_argument("--threads", type=int, help="worker threads across seeds (overrides config and $DSGT_THREADS)")
    r.add_argument("--output", help="override run.output")
    r.add_argument("--no-plot", action="store_true", help="skip the figure")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("sweep", help="run a config over one axis")
    s.add_argument("config")
    s.add_argument("--axis", required=True, choices=SWEEP_AXES)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--threads", type=int)
    s.add_argument("--output")
    s.add_argument("--no-plot", action="store_true")
    s.set_defaults(func=_cmd_sweep)

    sp = sub.add_parser("spectra", help="rho of W and the D^2 companion spectral radius")
    sp.add_argument("--matrix", required=True, help="matrix file or 'fixture3'")
    sp.add_argument("--topology", help="edge file; by default any support is accepted")
    sp.add_argument("--gamma", type=float, required=True)
    sp.set_defaults(func=_cmd_spectra)

    b = sub.add_parser("bound", help="evaluate the rate bounds for given constants")
    b.add_argument("--rho", type=float, required=True)
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--L", type=float, default=1.0)
    b.add_argument("--eta", type=float, default=1.0)
    b.add_argument("--lam", type=float, default=0.0)
    b.add_argument("--sigma-s-sq", type=float, default=0.0)
    b.add_argument("--f-gap", type=float, default=1.0, help="f(xbar_1) - f*")
    b.add_argument("--consensus1", type=float, default=0.0, help="||X_1 - 1 xbar_1^T||_F^2")
    b.add_argument("--tracker-dev1", type=float, default=0.0, help="E||Y_1 - 1 ybar_1^T||_F^2")
    b.add_argument("--gamma", type=float, help="constant stepsize (default: the cap)")
    b.add_argument("--a", type=float, help="diminishing stepsize a / k^p")
    b.add_argument("--p", type=float, default=0.5)
    b.add_argument("--K", type=int, default=1000)
    b.set_defaults(func=_cmd_bound)

    v = sub.add_parser("validate", help="check a mixing-matrix file against a topology file")
    v.add_argument("--matrix", required=True)
    v.add_argument("--topology", required=True)
    v.set_defaults(func=_cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except _UsageError as exc:
        print(f"dsgtlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MixingError as exc:
        where = f" (violated row index {exc.row + 1})" if exc.row is not None else ""
        print(f"dsgtlab: invalid mixing matrix: {exc}{where}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, TopologyError, ProblemError, FileNotFoundError, ValueError) as exc:
        print(f"dsgtlab: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
