import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsgtlab.topology import (
    FIXTURE3_MATRIX,
    MixingError,
    TopologyError,
    build_topology,
    fixture3,
    is_connected,
    load_mixing,
    metropolis_weights,
    read_matrix,
    read_topology,
    spectral_gap,
    spectral_gap_power,
    write_matrix,
    write_topology,
)


def test_ring_of_three_is_triangle():
    t = build_topology("ring", 3)
    assert t.sorted_edges() == [(0, 1), (0, 2), (1, 2)]


def test_path_and_complete():
    assert build_topology("path", 3).sorted_edges() == [(0, 1), (1, 2)]
    assert build_topology("complete", 2).sorted_edges() == [(0, 1)]
    assert len(build_topology("complete", 6).edges) == 15
    assert build_topology("star", 4).degrees().tolist() == [3, 1, 1, 1]


def test_k_regular_is_regular_and_seeded():
    a = build_topology("k_regular_random", 10, {"k": 3}, seed=4)
    b = build_topology("k_regular_random", 10, {"k": 3}, seed=4)
    assert a == b
    assert set(a.degrees().tolist()) == {3}


@pytest.mark.parametrize("n,k", [(5, 3), (4, 4), (4, 5)])
def test_k_regular_rejects_bad_combination(n, k):
    with pytest.raises(TopologyError):
        build_topology("k_regular_random", n, {"k": k})


def test_explicit_rejects_self_loop_and_range():
    with pytest.raises(TopologyError):
        build_topology("explicit", 3, {"edges": [(1, 1)]})
    with pytest.raises(TopologyError):
        build_topology("explicit", 3, {"edges": [(0, 3)]})


def test_connectivity():
    assert is_connected(build_topology("path", 5))
    assert not is_connected(build_topology("explicit", 4, {"edges": [(0, 1), (2, 3)]}))
    assert is_connected(build_topology("ring", 1))


def test_metropolis_path3():
    w = metropolis_weights(build_topology("path", 3)).w
    expected = np.array([[2 / 3, 1 / 3, 0], [1 / 3, 1 / 3, 1 / 3], [0, 1 / 3, 2 / 3]])
    np.testing.assert_allclose(w, expected, atol=1e-15)


def test_metropolis_disconnected_errors():
    with pytest.raises(TopologyError):
        metropolis_weights(build_topology("explicit", 4, {"edges": [(0, 1), (2, 3)]}))


def test_fixture_rho_and_spectrum():
    W = fixture3()
    assert W.rho == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(W.w)), [-0.5, 0.5, 1.0], atol=1e-12)


def test_complete_graph_uniform_weights_have_rho_zero():
    W = metropolis_weights(build_topology("complete", 5))
    np.testing.assert_allclose(W.w, np.full((5, 5), 0.2), atol=1e-15)
    assert W.rho == pytest.approx(0.0, abs=1e-12)


def test_load_mixing_rejects_off_support_row():
    bad = np.array([[0.5, 0.25, 0.25], [0.25, 0.5, 0.25], [0.25, 0.25, 0.5]])
    with pytest.raises(MixingError) as exc:
        load_mixing(bad, build_topology("path", 3))
    assert exc.value.row == 0


def test_load_mixing_rejects_bad_row_sum():
    bad = FIXTURE3_MATRIX.copy()
    bad[1, 1] = 0.1
    with pytest.raises(MixingError) as exc:
        load_mixing(bad, build_topology("path", 3))
    assert exc.value.row == 1


def test_negative_entries_allowed():
    w = np.array([[1.2, -0.2], [-0.2, 1.2]])
    W = load_mixing(w, build_topology("path", 2))
    assert W.rho == pytest.approx(1.4)


def test_identity_does_not_mix():
    assert spectral_gap(np.eye(4)) == pytest.approx(1.0)


def test_files_round_trip(tmp_path):
    t = build_topology("ring", 5)
    write_topology(t, tmp_path / "t.txt")
    assert read_topology(tmp_path / "t.txt") == t
    W = metropolis_weights(t)
    write_matrix(W.w, tmp_path / "w.txt")
    np.testing.assert_array_equal(read_matrix(tmp_path / "w.txt"), W.w)


def test_topology_file_is_one_based(tmp_path):
    (tmp_path / "t.txt").write_text("# comment\n3\n1 2\n2 3\n")
    assert read_topology(tmp_path / "t.txt").sorted_edges() == [(0, 1), (1, 2)]
    (tmp_path / "bad.txt").write_text("3\n0 1\n")
    with pytest.raises(TopologyError):
        read_topology(tmp_path / "bad.txt")


@st.composite
def connected_graphs(draw):
    n = draw(st.integers(1, 14))
    # random spanning tree plus extra edges keeps the graph connected
    edges = set()
    for v in range(1, n):
        u = draw(st.integers(0, v - 1))
        edges.add((u, v))
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=2 * n))
    for a, b in extra:
        if a != b:
            edges.add((min(a, b), max(a, b)))
    return build_topology("explicit", n, {"edges": sorted(edges)})


@settings(max_examples=120, deadline=None)
@given(connected_graphs())
def test_metropolis_properties(t):
    W = metropolis_weights(t)
    w = W.w
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-12)
    np.testing.assert_array_equal(w, w.T)
    assert np.all(w >= 0)
    adj = t.adjacency()
    off = ~adj & ~np.eye(t.n, dtype=bool)
    assert np.all(w[off] == 0)
    assert 0.0 <= W.rho < 1.0 or t.n == 1
    if t.n > 1:
        assert W.rho == pytest.approx(spectral_gap_power(w), rel=1e-6, abs=1e-9)
