import numpy as np
import pytest

from dsgtlab.problems import (
    LocalDataset,
    Problem,
    ProblemError,
    batch_size,
    centralized_reference,
    lipschitz_constants,
    make_least_squares,
    make_logistic,
    partition_dataset,
    problem_constants,
    read_dataset,
    sample_minibatch,
    sigma_s_oracle,
    write_dataset,
)


def ls(*groups):
    return Problem("least_squares", tuple(LocalDataset(np.asarray(g, float)[:, None]) for g in groups))


def test_batch_size_rounds_half_up_and_validates():
    assert batch_size(5, 0.5) == 3
    assert batch_size(4, 0.5) == 2
    assert batch_size(10, 1.0) == 10
    with pytest.raises(ProblemError):
        batch_size(3, 0.1)


def test_sample_minibatch_without_replacement():
    rng = np.random.default_rng(0)
    for _ in range(50):
        idx = sample_minibatch(7, 0.5, rng)
        assert len(idx) == 4 and len(set(idx.tolist())) == 4
    np.testing.assert_array_equal(sample_minibatch(5, 1.0, None), np.arange(5))


def test_sum_convention():
    p = ls([0.0, 2.0])
    np.testing.assert_allclose(p.full_gradient(0, [1.0]), [0.0])
    np.testing.assert_allclose(p.full_gradient(0, [3.0]), [4.0])  # (3-0) + (3-2)
    np.testing.assert_allclose(p.stochastic_gradient(0, [3.0], [1]), [1.0])
    assert p.loss([1.0]) == pytest.approx(1.0)


def test_centralized_reference_least_squares():
    ref = centralized_reference(ls([0.0, 1.0], [2.0, 3.0]))
    assert ref.x_star == pytest.approx([1.5])
    assert ref.f_star == pytest.approx(2.5)
    assert not ref.numeric
    const = centralized_reference(ls([4.0, 4.0], [4.0]))
    assert const.x_star == pytest.approx([4.0]) and const.f_star == pytest.approx(0.0)
    assert const.sigma_sq == 0.0


def test_centralized_reference_logistic_stationary():
    data = make_logistic(80, 3, seed=1)
    p = Problem("logistic", tuple(partition_dataset(data, 4)))
    ref = centralized_reference(p)
    assert ref.numeric
    assert np.linalg.norm(p.gradient(ref.x_star)) <= 1e-10


def test_logistic_reference_failure_is_reported():
    p = Problem("logistic", (make_logistic(50, 3, seed=2, separation=4.0),))
    with pytest.raises(ProblemError, match="did not reach"):
        centralized_reference(p, max_iter=1)


def test_lipschitz_least_squares_exact():
    p = ls([0.0, 1.0, 5.0], [2.0])
    L_i, _ = lipschitz_constants(p)
    rng = np.random.default_rng(2)
    for _ in range(100):
        x, y = rng.standard_normal(1), rng.standard_normal(1)
        for i in range(2):
            d = np.linalg.norm(p.full_gradient(i, x) - p.full_gradient(i, y))
            assert d == pytest.approx(L_i[i] * np.linalg.norm(x - y), rel=1e-12)


def test_lipschitz_logistic_bound():
    data = make_logistic(40, 3, seed=5)
    p = Problem("logistic", tuple(partition_dataset(data, 2)))
    L_i, _ = lipschitz_constants(p)
    rng = np.random.default_rng(3)
    for _ in range(100):
        x, y = rng.standard_normal(3) * 3, rng.standard_normal(3) * 3
        for i in range(2):
            ratio = np.linalg.norm(p.full_gradient(i, x) - p.full_gradient(i, y)) / np.linalg.norm(x - y)
            assert ratio <= L_i[i] + 1e-12


def test_unbiasedness():
    ds = make_logistic(8, 2, seed=7)
    p = Problem("logistic", (ds,))
    x = np.array([0.3, -0.4])
    rng = np.random.default_rng(11)
    draws = np.array([p.stochastic_gradient(0, x, sample_minibatch(ds, 0.25, rng)) for _ in range(100_000)])
    target = 0.25 * p.full_gradient(0, x)
    se = draws.std(axis=0) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - target) <= 3 * se)


def test_variance_enumeration_matches_closed_form():
    rng = np.random.default_rng(4)
    for _ in range(10):
        data = make_logistic(int(rng.integers(6, 12)), 2, seed=int(rng.integers(1000)))
        p = Problem("logistic", (data,))
        x = rng.standard_normal(2)
        a = sigma_s_oracle(p, 0.4, x=x, method="enumerate")
        b = sigma_s_oracle(p, 0.4, x=x, method="closed")
        assert a.sigma_s_sq == pytest.approx(b.sigma_s_sq, rel=1e-12)


def test_variance_full_batch_is_zero_and_probes_flag():
    data = make_logistic(10, 2, seed=1)
    p = Problem("logistic", tuple(partition_dataset(data, 2)))
    assert sigma_s_oracle(p, 1.0).sigma_s_sq == 0.0
    res = sigma_s_oracle(p, 0.5, probes=[np.zeros(2), np.ones(2)])
    assert not res.exact
    single = sigma_s_oracle(p, 0.5, probes=[np.ones(2)])
    assert res.sigma_s_sq >= single.sigma_s_sq


def test_variance_enumeration_budget():
    p = ls(list(range(40)))
    with pytest.raises(ProblemError):
        sigma_s_oracle(p, 0.5, method="enumerate")
    assert sigma_s_oracle(p, 0.5).sigma_s_sq > 0  # auto falls back to the closed form


def test_problem_constants_least_squares():
    c = problem_constants(ls([0.0, 1.0], [2.0, 3.0, 4.0]), 1.0)
    assert c.L == 3.0 and c.lam == 0.0 and c.L_tilde == 3.0
    assert c.sigma_s_sq == 0.0


def test_partition_proportions_and_errors():
    data = make_least_squares(10, seed=0)
    parts = partition_dataset(data, 2, [0.2, 0.8], shuffle=False)
    assert [d.size for d in parts] == [2, 8]
    np.testing.assert_array_equal(parts[0].targets, data.targets[:2])
    with pytest.raises(ProblemError):
        partition_dataset(data, 3, [0.0, 0.5, 0.5])
    with pytest.raises(ProblemError):
        partition_dataset(data, 2, [0.5, 0.6])


def test_dataset_csv_round_trip(tmp_path):
    for ds, kind in ((make_least_squares(5, 2, seed=1), "least_squares"), (make_logistic(6, 3, seed=1), "logistic")):
        path = tmp_path / f"{kind}.csv"
        write_dataset(ds, path)
        back = read_dataset(path, kind)
        np.testing.assert_array_equal(back.targets, ds.targets)
        if ds.features is not None:
            np.testing.assert_array_equal(back.features, ds.features)


def test_dataset_csv_errors(tmp_path):
    (tmp_path / "bad.csv").write_text("target_0\n1.0\nx\n")
    with pytest.raises(ProblemError, match=":3:"):
        read_dataset(tmp_path / "bad.csv", "least_squares")


def test_problem_validates_dimensions():
    with pytest.raises(ProblemError):
        Problem("least_squares", (LocalDataset(np.zeros((2, 1))), LocalDataset(np.zeros((2, 2)))))
    with pytest.raises(ProblemError):
        Problem("hinge", (LocalDataset(np.zeros((2, 1))),))
