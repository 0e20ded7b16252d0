"""Experiment orchestration: build, run, record, persist.

Output layout for a run rooted at ``run.output``::

    config.txt            serialized config echo
    trace_seed<S>.csv     iter,gamma,loss,grad_norm_sq,consensus_err,tracking_residual,running_R,gap
    summary.json          per-seed and aggregated results (deterministic)
    timing.json           wall-clock seconds (kept apart so summary.json stays reproducible)

A sweep writes one such directory per point plus ``sweep.csv``.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .algorithms import (
    STEPS,
    AlgoState,
    Diverged,
    GradientOracle,
    StepSchedule,
    tuned_stepsize,
    init_state,
    theorem_cap,
    warn_if_above_cap,
)
from .config import ExperimentConfig, serialize, with_value
from .metrics import MetricsTracker, consensus_error, make_bound_constants, theorem1_bound_curve
from .problems import (
    LocalDataset,
    Problem,
    ProblemError,
    batch_size,
    centralized_reference,
    make_least_squares,
    make_logistic,
    partition_dataset,
    problem_constants,
    read_dataset,
)
from .topology import (
    FIXTURE3_MATRIX,
    MixingMatrix,
    build_topology,
    fixture3,
    load_mixing,
    metropolis_weights,
    read_matrix,
    read_topology,
)

__all__ = [
    "TRACE_COLUMNS",
    "THREADS_ENV",
    "RunSummary",
    "SeedResult",
    "Experiment",
    "build_experiment",
    "run_experiment",
    "run_sweep",
    "SWEEP_AXES",
    "resolve_threads",
]

TRACE_COLUMNS = ("iter", "gamma", "loss", "grad_norm_sq", "consensus_err", "tracking_residual", "running_R", "gap")
THREADS_ENV = "DSGT_THREADS"
SWEEP_AXES = ("K", "n", "gamma", "topology")


def resolve_threads(cfg: ExperimentConfig, override: int | None = None) -> int:
    """CLI override, then the config's ``run.threads``, then ``$DSGT_THREADS``, then 1."""
    if override is not None:
        return max(1, int(override))
    if cfg.run.threads is not None:
        return cfg.run.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return 1


# ---------------------------------------------------------------------------
# Building blocks from a config
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Experiment:
    """Everything a seed needs, built once and shared read-only."""

    cfg: ExperimentConfig
    problem: Problem
    W: MixingMatrix
    batch_sizes: tuple[int, ...]
    x0: np.ndarray
    x_star: np.ndarray
    f_star: float
    L: float
    sigma_s_sq: float
    schedule: StepSchedule
    cap: float


def _pooled_data(cfg: ExperimentConfig) -> LocalDataset:
    p = cfg.problem
    if p.targets is not None:
        return LocalDataset(np.asarray(p.targets, dtype=float)[:, None])
    if p.data != "synthetic":
        return read_dataset(p.data, p.kind)
    if p.kind == "least_squares":
        return make_least_squares(p.samples, p.dim, seed=p.data_seed, low=p.low, high=p.high)
    return make_logistic(p.samples, p.dim, seed=p.data_seed, separation=p.separation)


def _mixing(cfg: ExperimentConfig) -> MixingMatrix:
    t = cfg.topology
    if t.kind == "fixture3":
        return fixture3()
    params = {}
    if t.kind == "k_regular_random":
        params["k"] = t.degree
    if t.kind == "explicit":
        topo = read_topology(t.file)
        if topo.n != t.n:
            raise ProblemError(f"edge file has n={topo.n}, config says n={t.n}")
    else:
        topo = build_topology(t.kind, t.n, params, seed=t.seed)
    if t.matrix == "metropolis":
        return metropolis_weights(topo)
    if t.matrix == "fixture3":
        return load_mixing(FIXTURE3_MATRIX, topo)
    return load_mixing(read_matrix(t.matrix), topo)


def _x0(cfg: ExperimentConfig, n: int, m: int) -> np.ndarray:
    v = np.asarray(cfg.algorithm.x0, dtype=float)
    if v.size == 1:
        return np.full((n, m), float(v[0]))
    if v.size == m:
        return np.tile(v, (n, 1))
    if v.size == n * m:
        return v.reshape(n, m)
    raise ProblemError(f"x0 has {v.size} entries; expected 1, {m} or {n * m}")


def build_experiment(cfg: ExperimentConfig) -> Experiment:
    """Problem, mixing matrix, batch sizes, reference solution and resolved stepsize."""
    pc = cfg.problem
    data = _pooled_data(cfg)
    central = cfg.algorithm.kind == "centralized_sgd"
    n = cfg.n
    parts = partition_dataset(data, n, pc.proportions, seed=pc.data_seed, shuffle=pc.shuffle)
    problem = Problem(pc.kind, tuple(parts))
    ref = centralized_reference(problem)
    if central:
        W = MixingMatrix(np.eye(1), 0.0)
        work = problem.pooled()
        M = cfg.algorithm.M if cfg.algorithm.M is not None else batch_size(work.total_size, pc.eta)
        bs = (int(M),)
    else:
        W = _mixing(cfg)
        if W.n != n:
            raise ProblemError(f"mixing matrix has n={W.n}, problem has n={n}")
        work = problem
        if pc.batch_size is not None:
            bs = (pc.batch_size,) * n
        else:
            bs = tuple(batch_size(int(s), pc.eta) for s in problem.sizes)
    consts = problem_constants(work, pc.eta, probes=[np.zeros(problem.dim), ref.x_star], batch_sizes=bs)
    L = consts.L
    rho = W.rho
    cap = theorem_cap(rho, pc.eta, L, work.n, consts.lam)
    x0 = _x0(cfg, problem.n, problem.dim)
    sc = cfg.schedule
    mult = sc.factor * (work.n if sc.scale_by_n else 1)
    if sc.kind == "constant":
        sched = StepSchedule.constant(sc.gamma0 * mult)
    elif sc.kind == "diminishing":
        sched = StepSchedule.diminishing(sc.a * mult, sc.p)
    elif sc.kind == "cap":
        sched = StepSchedule.constant(cap * mult)
    else:
        xbar = x0.mean(axis=0)
        D = math.sqrt(work.n * L * max(problem.loss(xbar) - ref.f_star, 0.0))
        K = max(cfg.run.K, 1)
        sched = StepSchedule.constant(tuned_stepsize(D, L, math.sqrt(consts.sigma_s_sq), K) * mult)
    if cfg.algorithm.kind in ("d2", "dsgt_eliminated") and sched.kind != "constant":
        raise ValueError(f"{cfg.algorithm.kind} requires a constant stepsize")
    return Experiment(cfg, work, W, bs, x0, ref.x_star, ref.f_star, L, consts.sigma_s_sq, sched, cap)


# ---------------------------------------------------------------------------
# Single seed
# ---------------------------------------------------------------------------


@dataclass
class SeedResult:
    seed: int
    summary: dict
    trace: np.ndarray = field(repr=False)


def _fmt(v: float) -> str:
    return repr(float(v))


def _run_seed(exp: Experiment, seed: int, out_dir: Path | None, node_pool: ThreadPoolExecutor | None) -> SeedResult:
    cfg = exp.cfg
    kind = cfg.algorithm.kind
    K, stride = cfg.run.K, cfg.run.stride
    thr = cfg.run.divergence_threshold
    problem = exp.problem
    oracle = GradientOracle(problem, cfg.problem.eta, seed, exp.batch_sizes, node_pool)
    step = STEPS[kind]
    sched = exp.schedule
    N = problem.total_size
    tracker = MetricsTracker(problem.pooled() if problem.n > 1 else problem, exp.L, exp.f_star, node_grads=cfg.run.node_grads)

    state: AlgoState = init_state(problem, exp.x0, exp.W, kind, oracle)
    bound_curve = None
    bound_info = None
    if cfg.run.bound and kind in ("dsgt", "dsgt_eliminated"):
        xbar1 = state.X.mean(axis=0)
        c = make_bound_constants(
            exp.W.rho, cfg.problem.eta, problem.n, exp.L, exp.sigma_s_sq,
            f1_gap=problem.loss(xbar1) - exp.f_star,
            consensus1=consensus_error(state.X),
            tracker_dev1=consensus_error(state.Y),
            gamma1=sched.first,
        )
        bound_curve = theorem1_bound_curve(c, sched, K + 1)
        bound_info = {"valid": c.admits(sched), "violations": 0, "first_violation": None, "theta": c.theta, "C": c.C, "D": c.D}

    rows = []
    tail_len = max(1, math.ceil(0.1 * (K + 1)))
    tail_sum = np.zeros(problem.dim)
    tail_count = 0
    iters_to_eps = None
    eps = cfg.run.epsilon
    max_resid = 0.0
    diverged_at = None
    last = None
    for s in range(K + 1):
        gamma = sched.at(state.k)
        rec = tracker.record(state, gamma)
        last = rec
        max_resid = max(max_resid, rec.tracking_residual)
        if eps is not None and iters_to_eps is None and rec.grad_norm_sq / N**2 <= eps:
            iters_to_eps = s
        if s >= K + 1 - tail_len:
            tail_sum += state.X.mean(axis=0)
            tail_count += 1
        if bound_curve is not None and rec.running_R > bound_curve[s] * (1 + 1e-12) + 1e-300:
            bound_info["violations"] += 1
            if bound_info["first_violation"] is None:
                bound_info["first_violation"] = rec.k
        if s % stride == 0:
            rows.append((rec.k, rec.gamma, rec.loss, rec.grad_norm_sq, rec.consensus_err,
                         rec.tracking_residual, rec.running_R, rec.gap))
        if s == K:
            break
        try:
            state = step(state, exp.W, gamma, oracle, thr)
        except Diverged as exc:
            diverged_at = exc.iteration
            break

    trace = np.array(rows, dtype=float).reshape(-1, len(TRACE_COLUMNS))
    if out_dir is not None:
        with (out_dir / f"trace_seed{seed}.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in rows:
                w.writerow([str(int(r[0]))] + [_fmt(v) for v in r[1:]])

    summary = {
        "seed": seed,
        "verdict": "DIVERGED" if diverged_at is not None else "OK",
        "diverged": diverged_at is not None,
        "diverged_at": diverged_at,
        "iterations": state.k - 1,
        "records": len(rows),
        "final_running_R": last.running_R,
        "min_running_R": tracker.min_R,
        "final_running_Rc": last.running_Rc,
        "final_consensus_err": last.consensus_err,
        "final_loss": last.loss,
        "final_gap": last.gap,
        "final_grad_norm_sq": last.grad_norm_sq,
        "max_tracking_residual": max_resid,
        "final_xbar": state.X.mean(axis=0).tolist(),
        "tail_mean_xbar": (tail_sum / tail_count).tolist() if tail_count and diverged_at is None else None,
        "iters_to_eps": iters_to_eps,
        "min_node_grad": tracker.min_node_grad if cfg.run.node_grads else None,
        "bound": bound_info,
    }
    return SeedResult(seed, summary, trace)


# ---------------------------------------------------------------------------
# Runs and sweeps
# ---------------------------------------------------------------------------


@dataclass
class RunSummary:
    config: ExperimentConfig
    metadata: dict
    seeds: list[SeedResult]
    aggregate: dict
    output: Path | None
    wall_clock: float

    @property
    def verdict(self) -> str:
        return self.aggregate["verdict"]

    def to_json(self) -> dict:
        return {
            "metadata": self.metadata,
            "aggregate": self.aggregate,
            "seeds": [r.summary for r in self.seeds],
            "config": self.config.as_dict(),
        }


_AGG_KEYS = ("final_running_R", "min_running_R", "final_running_Rc", "final_consensus_err",
             "final_loss", "final_gap", "max_tracking_residual")


def _aggregate(results: Sequence[SeedResult]) -> dict:
    ok = [r.summary for r in results if not r.summary["diverged"]]
    agg: dict = {
        "verdict": "DIVERGED" if len(ok) < len(results) else "OK",
        "seeds": len(results),
        "diverged_seeds": len(results) - len(ok),
    }
    for key in _AGG_KEYS:
        vals = np.array([s[key] for s in ok], dtype=float)
        agg[f"{key}_mean"] = float(vals.mean()) if vals.size else None
        agg[f"{key}_std"] = float(vals.std()) if vals.size else None
    tails = [s["tail_mean_xbar"] for s in ok if s["tail_mean_xbar"] is not None]
    agg["tail_mean_xbar_mean"] = np.mean(tails, axis=0).tolist() if tails else None
    hits = [s["iters_to_eps"] for s in ok]
    agg["iters_to_eps_mean"] = float(np.mean(hits)) if hits and all(h is not None for h in hits) else None
    bounds = [s["bound"] for s in ok if s["bound"] is not None]
    agg["bound_violations"] = sum(b["violations"] for b in bounds) if bounds else None
    return agg


def run_experiment(cfg: ExperimentConfig, threads: int | None = None, write: bool = True) -> RunSummary:
    """Run every seed of ``cfg``; per-seed traces are independent of thread count."""
    t0 = time.perf_counter()
    exp = build_experiment(cfg)
    if cfg.schedule.kind == "constant" and cfg.algorithm.kind != "centralized_sgd":
        warn_if_above_cap(exp.schedule.first, exp.cap)
    out = Path(cfg.run.output) if write else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(serialize(cfg))
    n_threads = resolve_threads(cfg, threads)
    node_pool = ThreadPoolExecutor(cfg.run.node_threads) if cfg.run.node_threads > 1 else None
    try:
        if n_threads > 1 and len(cfg.run.seeds) > 1:
            with ThreadPoolExecutor(n_threads) as pool:
                results = list(pool.map(lambda s: _run_seed(exp, s, out, node_pool), cfg.run.seeds))
        else:
            results = [_run_seed(exp, s, out, node_pool) for s in cfg.run.seeds]
    finally:
        if node_pool is not None:
            node_pool.shutdown()
    central = cfg.algorithm.kind == "centralized_sgd"
    meta = {
        "algorithm": cfg.algorithm.kind,
        "gradient_convention": "mean over M samples" if central else "sum over mini-batch",
        "n": exp.problem.n,
        "N": exp.problem.total_size,
        "rho": exp.W.rho,
        "L": exp.L,
        "eta": cfg.problem.eta,
        "batch_sizes": list(exp.batch_sizes),
        "sigma_s_sq": exp.sigma_s_sq,
        "gamma_first": exp.schedule.first,
        "schedule": cfg.schedule.kind,
        "cap": exp.cap,
        "x_star": exp.x_star.tolist(),
        "f_star": exp.f_star,
        "K": cfg.run.K,
    }
    summary = RunSummary(cfg, meta, results, _aggregate(results), out, time.perf_counter() - t0)
    if out is not None:
        with (out / "summary.json").open("w", newline="\n") as fh:
            json.dump(summary.to_json(), fh, indent=2)
            fh.write("\n")
        (out / "timing.json").write_text(json.dumps({"wall_clock_seconds": summary.wall_clock}) + "\n")
    return summary


SWEEP_COLUMNS = ("axis", "value", "n", "K", "gamma_first", "rho", "diverged_seeds", "final_R_mean",
                 "final_R_std", "min_R_mean", "final_consensus_err_mean", "final_loss_mean",
                 "iters_to_eps_mean", "speedup")


def _point_config(base: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "K":
        return with_value(base, "run.K", int(value))
    if axis == "n":
        return with_value(base, "topology.n", int(value))
    if axis == "topology":
        return with_value(base, "topology.kind", str(value))
    if axis == "gamma":
        kind = base.schedule.kind
        if kind == "constant":
            return with_value(base, "schedule.gamma0", float(value))
        if kind == "diminishing":
            return with_value(base, "schedule.a", float(value))
        return with_value(base, "schedule.factor", float(value))
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def run_sweep(base: ExperimentConfig, axis: str, values: Sequence, threads: int | None = None,
              write: bool = True) -> tuple[list[RunSummary], list[dict]]:
    """Run ``base`` at each value of ``axis`` and build the comparative table.

    For the ``n`` axis the table carries the mean iterations-to-epsilon and
    the speedup ``K_first / K_n`` relative to the first value.  The ``gamma``
    axis sets ``gamma0`` (constant), ``a`` (diminishing) or the multiplier
    ``factor`` (cap/tuned); any scaling with ``n`` is up to the caller.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if not values:
        raise ValueError("sweep needs at least one value")
    root = Path(base.run.output)
    summaries, table = [], []
    for v in values:
        cfg = _point_config(base, axis, v)
        cfg = with_value(cfg, "run.output", str(root / f"{axis}_{v}"))
        summaries.append(run_experiment(cfg, threads=threads, write=write))
    ref = summaries[0].aggregate["iters_to_eps_mean"]
    for v, s in zip(values, summaries):
        a = s.aggregate
        k_eps = a["iters_to_eps_mean"]
        speedup = ref / k_eps if axis == "n" and ref is not None and k_eps else None
        table.append({
            "axis": axis, "value": v, "n": s.metadata["n"], "K": s.metadata["K"],
            "gamma_first": s.metadata["gamma_first"], "rho": s.metadata["rho"],
            "diverged_seeds": a["diverged_seeds"], "final_R_mean": a["final_running_R_mean"],
            "final_R_std": a["final_running_R_std"], "min_R_mean": a["min_running_R_mean"],
            "final_consensus_err_mean": a["final_consensus_err_mean"], "final_loss_mean": a["final_loss_mean"],
            "iters_to_eps_mean": k_eps, "speedup": speedup,
        })
    if write:
        root.mkdir(parents=True, exist_ok=True)
        with (root / "sweep.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for row in table:
                w.writerow(["" if row[c] is None else (_fmt(row[c]) if isinstance(row[c], float) else row[c])
                            for c in SWEEP_COLUMNS])
    return summaries, table
