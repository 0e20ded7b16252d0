"""Communication graphs, doubly stochastic mixing matrices and their spectra.

Nodes are indexed ``0..n-1`` in Python.  Plain-text topology files use the
1-based convention (first line ``n``, then one ``i j`` pair per line), and the
readers/writers below translate between the two.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "TOPOLOGY_KINDS",
    "Topology",
    "MixingMatrix",
    "TopologyError",
    "MixingError",
    "build_topology",
    "is_connected",
    "metropolis_weights",
    "load_mixing",
    "spectral_gap",
    "spectral_gap_power",
    "fixture3",
    "FIXTURE3_MATRIX",
    "read_topology",
    "write_topology",
    "read_matrix",
    "write_matrix",
]

TOPOLOGY_KINDS = ("ring", "path", "complete", "star", "k_regular_random", "explicit")
KINDS = TOPOLOGY_KINDS

#: Optimal (minimum-rho) weight matrix for the 3-node path graph.
FIXTURE3_MATRIX = np.array(
    [
        [0.5, 0.5, 0.0],
        [0.5, 0.0, 0.5],
        [0.0, 0.5, 0.5],
    ]
)

LOADED_TOL = 1e-9
BUILT_TOL = 1e-12


class TopologyError(ValueError):
    pass


class MixingError(ValueError):
    """Raised when a weight matrix violates double stochasticity or support.

    ``row`` holds the offending (0-based) row index when one can be named.
    """

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


@dataclass(frozen=True)
class Topology:
    """Undirected simple graph on nodes ``0..n-1``.

    Edges are stored as sorted pairs ``(i, j)`` with ``i < j``.
    """

    n: int
    edges: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise TopologyError(f"node count must be >= 1, got {self.n}")
        clean = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise TopologyError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise TopologyError(f"edge ({i}, {j}) has an endpoint outside [0, {self.n})")
            clean.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(clean))

    def neighbors(self, i: int) -> list[int]:
        out = [b for a, b in self.edges if a == i] + [a for a, b in self.edges if b == i]
        return sorted(out)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.edges:
            a[i, j] = a[j, i] = True
        return a

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)


@dataclass(frozen=True)
class MixingMatrix:
    """Dense doubly stochastic weight matrix with its cached ``rho``.

    ``rho`` is the spectral norm of ``W - (1/n) 11^T``.
    """

    w: np.ndarray
    rho: float
    topology: Topology | None = None

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def __post_init__(self) -> None:
        w = np.array(self.w, dtype=float, copy=True)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)


def _random_regular_edges(n: int, k: int, rng: np.random.Generator) -> set[tuple[int, int]]:
    # configuration model with restarts; dense graphs are complements of sparse ones
    if k > (n - 1) / 2:
        sparse = _random_regular_edges(n, n - 1 - k, rng)
        return {(i, j) for i in range(n) for j in range(i + 1, n)} - sparse
    for _ in range(10_000):
        stubs = np.repeat(np.arange(n), k)
        rng.shuffle(stubs)
        pairs = stubs.reshape(-1, 2)
        edges = set()
        ok = True
        for a, b in pairs:
            a, b = int(a), int(b)
            e = (min(a, b), max(a, b))
            if a == b or e in edges:
                ok = False
                break
            edges.add(e)
        if ok:
            return edges
    raise TopologyError(f"failed to sample a simple {k}-regular graph on {n} nodes")


def build_topology(
    kind: str,
    n: int,
    params: dict | None = None,
    seed: int = 0,
) -> Topology:
    """Build a graph from one of the built-in families.

    Parameters
    ----------
    kind : str
        One of ``ring``, ``path``, ``complete``, ``star``,
        ``k_regular_random`` or ``explicit``.
    n : int
        Number of nodes.
    params : dict, optional
        ``{"k": int}`` for ``k_regular_random``; ``{"edges": [(i, j), ...]}``
        (0-based) for ``explicit``.
    seed : int
        Seed for the random family.
    """
    params = dict(params or {})
    if n < 1:
        raise TopologyError(f"node count must be >= 1, got {n}")
    if kind == "ring":
        if n <= 2:
            edges = {(0, 1)} if n == 2 else set()
        else:
            edges = {(i, (i + 1) % n) for i in range(n)}
    elif kind == "path":
        edges = {(i, i + 1) for i in range(n - 1)}
    elif kind == "complete":
        edges = {(i, j) for i in range(n) for j in range(i + 1, n)}
    elif kind == "star":
        edges = {(0, j) for j in range(1, n)}
    elif kind == "k_regular_random":
        if "k" not in params:
            raise TopologyError("k_regular_random needs parameter 'k'")
        k = int(params["k"])
        if k < 0 or k >= n or (k * n) % 2:
            raise TopologyError(f"invalid k-regular combination k={k}, n={n} (need k < n, k*n even)")
        edges = _random_regular_edges(n, k, np.random.default_rng(seed)) if k else set()
    elif kind == "explicit":
        edges = set(params.get("edges", ()))
    else:
        raise TopologyError(f"unknown topology kind {kind!r}; expected one of {KINDS}")
    return Topology(n, frozenset(edges))


def is_connected(t: Topology) -> bool:
    """Breadth-first reachability from node 0."""
    adj = [[] for _ in range(t.n)]
    for i, j in t.edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == t.n


def _check_doubly_stochastic(w: np.ndarray, tol: float) -> None:
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise MixingError(f"weight matrix must be square, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise MixingError("weight matrix has non-finite entries")
    rows = w.sum(axis=1)
    bad = np.flatnonzero(np.abs(rows - 1.0) > tol)
    if bad.size:
        r = int(bad[0])
        raise MixingError(f"row {r + 1} sums to {float(rows[r])!r}, not 1", row=r)
    cols = w.sum(axis=0)
    bad = np.flatnonzero(np.abs(cols - 1.0) > tol)
    if bad.size:
        c = int(bad[0])
        raise MixingError(f"column {c + 1} sums to {float(cols[c])!r}, not 1", row=c)


def spectral_gap(w: np.ndarray, tol: float = LOADED_TOL) -> float:
    """Return ``||W - (1/n) 11^T||_2``.

    The norm is the square root of the top eigenvalue of ``(W-J)^T (W-J)``,
    computed with a symmetric eigensolver.
    """
    w = np.asarray(w, dtype=float)
    _check_doubly_stochastic(w, tol)
    n = w.shape[0]
    d = w - np.full((n, n), 1.0 / n)
    top = np.linalg.eigvalsh(d.T @ d)[-1]
    return float(np.sqrt(max(top, 0.0)))


def spectral_gap_power(
    w: np.ndarray,
    rtol: float = 1e-10,
    max_iter: int = 100_000,
    seed: int = 0,
) -> float:
    """Power iteration on ``(W-J)^T (W-J)``; independent route to :func:`spectral_gap`."""
    w = np.asarray(w, dtype=float)
    _check_doubly_stochastic(w, LOADED_TOL)
    n = w.shape[0]
    d = w - np.full((n, n), 1.0 / n)
    g = d.T @ d
    v = np.random.default_rng(seed).standard_normal(n)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return 0.0
    v /= nv
    est = 0.0
    for _ in range(max_iter):
        u = g @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return 0.0
        new = float(v @ u)
        v = u / nu
        if abs(new - est) <= rtol * max(abs(new), 1e-300):
            est = new
            break
        est = new
    return float(np.sqrt(max(est, 0.0)))


def metropolis_weights(t: Topology) -> MixingMatrix:
    """Metropolis-Hastings weights ``1 / (1 + max(deg_i, deg_j))`` on edges.

    The diagonal absorbs the remainder of each row, so the result is
    symmetric, nonnegative and doubly stochastic.
    """
    if not is_connected(t):
        raise TopologyError("Metropolis weights need a connected graph")
    deg = t.degrees()
    w = np.zeros((t.n, t.n))
    for i, j in t.edges:
        w[i, j] = w[j, i] = 1.0 / (1 + max(deg[i], deg[j]))
    w[np.diag_indices(t.n)] = 1.0 - w.sum(axis=1)
    _check_doubly_stochastic(w, BUILT_TOL)
    return MixingMatrix(w, spectral_gap(w, BUILT_TOL), t)


def load_mixing(matrix, t: Topology, tol: float = LOADED_TOL) -> MixingMatrix:
    """Validate a user-supplied weight matrix against a graph.

    Negative entries are allowed; off-support nonzeros and row/column sums
    further than ``tol`` from one are rejected with :class:`MixingError`.
    """
    w = np.asarray(matrix, dtype=float)
    if w.shape != (t.n, t.n):
        raise MixingError(f"matrix shape {w.shape} does not match topology with n={t.n}")
    _check_doubly_stochastic(w, tol)
    adj = t.adjacency()
    off = ~adj
    np.fill_diagonal(off, False)
    bad = np.argwhere(off & (w != 0.0))
    if bad.size:
        i, j = (int(v) for v in bad[0])
        raise MixingError(
            f"row {i + 1}: nonzero weight {w[i, j]!r} at column {j + 1} but nodes are not adjacent",
            row=i,
        )
    return MixingMatrix(w, spectral_gap(w, tol), t)


def fixture3() -> MixingMatrix:
    """The optimal weight matrix on the 3-node path; ``rho = 0.5``."""
    return load_mixing(FIXTURE3_MATRIX, build_topology("path", 3))


# ---------------------------------------------------------------------------
# Plain-text files
# ---------------------------------------------------------------------------


def _content_lines(path) -> list[tuple[int, str]]:
    out = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            out.append((lineno, line))
    return out


def read_topology(path) -> Topology:
    """Read ``n`` followed by 1-based ``i j`` edge lines."""
    lines = _content_lines(path)
    if not lines:
        raise TopologyError(f"{path}: empty topology file")
    try:
        n = int(lines[0][1])
    except ValueError:
        raise TopologyError(f"{path}:{lines[0][0]}: expected node count, got {lines[0][1]!r}") from None
    edges = []
    for lineno, line in lines[1:]:
        parts = line.split()
        if len(parts) != 2:
            raise TopologyError(f"{path}:{lineno}: expected 'i j', got {line!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise TopologyError(f"{path}:{lineno}: non-integer endpoint in {line!r}") from None
        if not (1 <= i <= n and 1 <= j <= n):
            raise TopologyError(f"{path}:{lineno}: endpoint out of range [1, {n}] in {line!r}")
        if i == j:
            raise TopologyError(f"{path}:{lineno}: self-loop at node {i}")
        edges.append((i - 1, j - 1))
    return Topology(n, frozenset(edges))


def write_topology(t: Topology, path) -> None:
    lines = [str(t.n)] + [f"{i + 1} {j + 1}" for i, j in t.sorted_edges()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix(path) -> np.ndarray:
    """Read whitespace-separated rows; every row must have the same length."""
    rows = []
    for lineno, line in _content_lines(path):
        try:
            rows.append([float(v) for v in line.split()])
        except ValueError:
            raise MixingError(f"{path}:{lineno}: non-numeric entry in {line!r}") from None
    if not rows:
        raise MixingError(f"{path}: empty matrix file")
    width = len(rows[0])
    for r, row in enumerate(rows):
        if len(row) != width:
            raise MixingError(f"{path}: row {r + 1} has {len(row)} entries, expected {width}", row=r)
    if width != len(rows):
        raise MixingError(f"{path}: matrix is {len(rows)}x{width}, expected square")
    return np.array(rows)


def write_matrix(w: np.ndarray, path) -> None:
    Path(path).write_text("\n".join(" ".join(repr(float(v)) for v in row) for row in np.asarray(w)) + "\n")
