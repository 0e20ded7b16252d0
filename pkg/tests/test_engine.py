import json
import math
import warnings

import numpy as np
import pytest

from dsgtlab.algorithms import GradientOracle, StepSchedule
from dsgtlab.config import parse_config, parse_config_text, with_value
from dsgtlab.engine import TRACE_COLUMNS, build_experiment, resolve_threads, run_experiment, run_sweep
from dsgtlab.metrics import consensus_error, make_bound_constants, convex_bound
from dsgtlab.problems import LocalDataset, Problem

FIXTURE = """
[problem]
kind = least_squares
targets = 0, 1, 2
shuffle = false
[topology]
kind = fixture3
[algorithm]
kind = {alg}
[schedule]
kind = constant
gamma0 = {gamma}
[run]
K = {K}
seeds = 0
output = {out}
"""


def fixture_cfg(tmp_path, alg="dsgt", gamma=0.25, K=2000, **extra):
    cfg = parse_config_text(FIXTURE.format(alg=alg, gamma=gamma, K=K, out=tmp_path / "out"))
    for k, v in extra.items():
        cfg = with_value(cfg, k, v)
    return cfg


@pytest.fixture(autouse=True)
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


def read_trace(path):
    return path.read_bytes()


def test_fixture_d2_diverges(tmp_path):
    s = run_experiment(fixture_cfg(tmp_path, "d2", 0.25, 500))
    assert s.verdict == "DIVERGED"
    seed = s.seeds[0].summary
    assert seed["diverged"] and seed["diverged_at"] <= 501
    data = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert data["aggregate"]["verdict"] == "DIVERGED"


def test_fixture_dsgt_converges(tmp_path):
    s = run_experiment(fixture_cfg(tmp_path))
    assert s.verdict == "OK"
    assert s.seeds[0].summary["final_consensus_err"] < 1e-12
    assert s.seeds[0].summary["final_xbar"] == pytest.approx([1.0])
    assert s.metadata["x_star"] == [1.0]


def test_k_zero_has_only_initial_record(tmp_path):
    s = run_experiment(fixture_cfg(tmp_path, K=0))
    assert s.seeds[0].summary["records"] == 1
    lines = (tmp_path / "out" / "trace_seed0.csv").read_text().splitlines()
    assert len(lines) == 2 and lines[1].startswith("1,")


@pytest.mark.parametrize("K,stride", [(10, 1), (10, 3), (9, 3), (7, 10)])
def test_trace_completeness(tmp_path, K, stride):
    s = run_experiment(fixture_cfg(tmp_path, K=K, **{"run.stride": stride}))
    raw = (tmp_path / "out" / "trace_seed0.csv").read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == ",".join(TRACE_COLUMNS)
    assert len(lines) - 1 == K // stride + 1
    assert s.seeds[0].trace.shape == (K // stride + 1, len(TRACE_COLUMNS))


STOCHASTIC = """
[problem]
kind = logistic
samples = 96
dim = 3
eta = 0.25
[topology]
kind = ring
n = 6
[algorithm]
kind = dsgt
x0 = 0.5
[schedule]
kind = diminishing
a = 0.02
p = 0.5
[run]
K = 60
seeds = 0, 1, 2, 3
output = {out}
"""


def test_determinism_across_thread_counts(tmp_path):
    outs = []
    for i, (threads, node_threads) in enumerate([(1, 1), (8, 1), (8, 4)]):
        cfg = parse_config_text(STOCHASTIC.format(out=tmp_path / f"r{i}"))
        cfg = with_value(cfg, "run.node_threads", node_threads)
        run_experiment(cfg, threads=threads)
        outs.append(tmp_path / f"r{i}")
    for seed in (0, 1, 2, 3):
        ref = read_trace(outs[0] / f"trace_seed{seed}.csv")
        for o in outs[1:]:
            assert read_trace(o / f"trace_seed{seed}.csv") == ref
    docs = [json.loads((o / "summary.json").read_text()) for o in outs]
    for d in docs:
        d["config"]["run"].pop("output")
        d["config"]["run"].pop("node_threads")
    assert docs[0] == docs[1] == docs[2]


def test_seeds_differ(tmp_path):
    s = run_experiment(parse_config_text(STOCHASTIC.format(out=tmp_path / "o")), write=False)
    assert not np.array_equal(s.seeds[0].trace, s.seeds[1].trace)
    agg = s.aggregate
    vals = [r.summary["final_running_R"] for r in s.seeds]
    assert agg["final_running_R_mean"] == pytest.approx(np.mean(vals))
    assert agg["final_running_R_std"] == pytest.approx(np.std(vals))


def test_seed_isolation():
    rng = np.random.default_rng(0)
    base = [LocalDataset(rng.standard_normal((10, 1))) for _ in range(4)]
    changed = [LocalDataset(rng.standard_normal((7, 1)))] + base[1:]
    a = GradientOracle(Problem("least_squares", tuple(base)), 0.5, seed=3)
    b = GradientOracle(Problem("least_squares", tuple(changed)), 0.5, seed=3)
    for k in range(1, 20):
        for i in range(1, 4):
            np.testing.assert_array_equal(a.batch(i, k), b.batch(i, k))


def test_outputs_and_config_echo(tmp_path):
    cfg = fixture_cfg(tmp_path, K=5)
    run_experiment(cfg)
    out = tmp_path / "out"
    assert parse_config(out / "config.txt") == cfg
    data = json.loads((out / "summary.json").read_text())
    assert set(data) == {"metadata", "aggregate", "seeds", "config"}
    assert data["metadata"]["gradient_convention"] == "sum over mini-batch"
    assert "wall_clock_seconds" in json.loads((out / "timing.json").read_text())


def test_centralized_run(tmp_path):
    text = FIXTURE.format(alg="centralized_sgd", gamma=0.5, K=50, out=tmp_path / "c")
    s = run_experiment(parse_config_text(text))
    assert s.metadata["gradient_convention"] == "mean over M samples"
    assert s.metadata["n"] == 1
    assert s.seeds[0].summary["final_xbar"] == pytest.approx([1.0], abs=1e-9)


def test_two_step_methods_reject_diminishing(tmp_path):
    cfg = parse_config_text(STOCHASTIC.format(out=tmp_path).replace("kind = dsgt", "kind = d2"))
    with pytest.raises(ValueError, match="constant"):
        build_experiment(cfg)


def test_node_gradient_relation_and_bound_dominance(tmp_path):
    cfg = parse_config_text(STOCHASTIC.format(out=tmp_path))
    cfg = with_value(cfg, "run.node_grads", True)
    cfg = with_value(cfg, "run.bound", True)
    s = run_experiment(cfg, write=False)
    for r in s.seeds:
        m = r.summary
        assert m["min_node_grad"] <= m["final_running_R"]
        assert m["bound"] is not None


def test_convex_bound_dominates_fixture_run():
    p = Problem("least_squares", tuple(LocalDataset(np.array([[a]])) for a in (0.0, 1.0, 2.0)))
    from dsgtlab.algorithms import init_state, dsgt_step
    from dsgtlab.metrics import MetricsTracker
    from dsgtlab.topology import fixture3

    W = fixture3()
    o = GradientOracle(p, 1.0)
    X0 = np.array([[3.0], [-1.0], [0.5]])
    s = init_state(p, X0, W, "dsgt", o)
    gamma = 1 / 9
    xbar1 = s.X.mean(axis=0)
    c = make_bound_constants(W.rho, 1.0, 3, 1.0, 0.0, p.loss(xbar1) - 1.0, consensus_error(s.X),
                             consensus_error(s.Y), gamma, e1=float(np.sum((xbar1 - 1.0) ** 2)))
    tr = MetricsTracker(p, 1.0, f_star=1.0)
    sched = StepSchedule.constant(gamma)
    for k in range(1, 300):
        rec = tr.record(s, gamma)
        assert rec.running_Rc <= convex_bound(c, sched, k).value
        s = dsgt_step(s, W, gamma, o)


def test_sweep_n_axis(tmp_path):
    text = """
[problem]
kind = least_squares
samples = 32
eta = 0.5
[topology]
kind = ring
n = 1
[algorithm]
kind = dsgt
x0 = 2.0
[schedule]
kind = constant
gamma0 = 0.02
scale_by_n = true
[run]
K = 400
seeds = 0, 1
epsilon = 1e-3
output = {out}
""".format(out=tmp_path / "sw")
    summaries, table = run_sweep(parse_config_text(text), "n", [1, 2, 4])
    assert [row["n"] for row in table] == [1, 2, 4]
    assert table[0]["speedup"] == 1.0
    for row in table:
        assert 0.5 <= row["speedup"] <= 2.0
    lines = (tmp_path / "sw" / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("axis,value,n,K") and len(lines) == 4
    assert (tmp_path / "sw" / "n_2" / "trace_seed1.csv").exists()


def test_sweep_topology_and_gamma(tmp_path):
    cfg = parse_config_text(STOCHASTIC.format(out=tmp_path / "t"))
    _, table = run_sweep(cfg, "topology", ["ring", "complete"], write=False)
    assert table[1]["rho"] == pytest.approx(0.0, abs=1e-12)
    _, table = run_sweep(cfg, "gamma", [0.01, 0.02], write=False)
    assert [row["gamma_first"] for row in table] == [0.01, 0.02]
    with pytest.raises(ValueError):
        run_sweep(cfg, "eta", [0.1])


def test_thread_resolution(monkeypatch):
    cfg = parse_config_text(FIXTURE.format(alg="dsgt", gamma=0.1, K=1, out="x"))
    monkeypatch.delenv("DSGT_THREADS", raising=False)
    assert resolve_threads(cfg) == 1
    monkeypatch.setenv("DSGT_THREADS", "6")
    assert resolve_threads(cfg) == 6
    assert resolve_threads(cfg, 2) == 2
    assert resolve_threads(with_value(cfg, "run.threads", 3)) == 3


def test_tuned_and_cap_schedules(tmp_path):
    cfg = parse_config_text(STOCHASTIC.format(out=tmp_path))
    cfg = with_value(cfg, "schedule.kind", "tuned")
    exp = build_experiment(cfg)
    D = math.sqrt(6 * exp.L * (exp.problem.loss(np.full(3, 0.5)) - exp.f_star))
    assert exp.schedule.first == pytest.approx(D / (math.sqrt(60) * exp.L * math.sqrt(exp.sigma_s_sq)))
    cap = build_experiment(with_value(cfg, "schedule.kind", "cap"))
    assert cap.schedule.first == pytest.approx(cap.cap)
