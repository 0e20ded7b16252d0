"""Iteration rules: DSGT (tracker and eliminated forms), D-PSGD, D^2, centralized SGD.

All decentralized rules consume *sum* mini-batch gradients (see
:mod:`dsgtlab.problems`).  The centralized rule divides by the batch size.

A step maps ``(state, W, gamma, oracle)`` to a new :class:`AlgoState`; the
oracle's counter-based streams make each step a deterministic function of
the master seed and the iteration index.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import Executor
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .problems import Problem, ProblemError, batch_size, sample_minibatch
from .rng import stream
from .topology import MixingMatrix

__all__ = [
    "ALGORITHMS",
    "AlgoState",
    "StepSchedule",
    "GradientOracle",
    "Diverged",
    "CompanionSpectrum",
    "init_state",
    "dsgt_step",
    "dsgt_step_eliminated",
    "dpsgd_step",
    "d2_step",
    "centralized_step",
    "centralized_sgd_step",
    "d2_companion",
    "stepsize_at",
    "theorem_cap",
    "tuned_stepsize",
    "STEPS",
]

ALGORITHMS = ("dsgt", "dsgt_eliminated", "dpsgd", "d2", "centralized_sgd")
DIVERGENCE_THRESHOLD = 1e6


class Diverged(RuntimeError):
    def __init__(self, iteration: int, norm: float):
        super().__init__(f"iterates diverged at iteration {iteration} (||X||_F = {norm:.3e})")
        self.iteration = iteration
        self.norm = norm


# ---------------------------------------------------------------------------
# Stepsizes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepSchedule:
    """``constant`` (``gamma0``) or ``diminishing`` (``a / k**p``, ``p`` in [0.5, 1])."""

    kind: str
    gamma0: float = 0.0
    a: float = 0.0
    p: float = 0.5

    def __post_init__(self) -> None:
        if self.kind == "constant":
            if not self.gamma0 >= 0.0:
                raise ValueError(f"constant stepsize must be >= 0, got {self.gamma0}")
        elif self.kind == "diminishing":
            if not self.a > 0.0:
                raise ValueError(f"diminishing stepsize needs a > 0, got {self.a}")
            if not 0.5 <= self.p <= 1.0:
                raise ValueError(f"diminishing exponent p must lie in [0.5, 1], got {self.p}")
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def constant(cls, gamma0: float) -> "StepSchedule":
        return cls("constant", gamma0=float(gamma0))

    @classmethod
    def diminishing(cls, a: float, p: float) -> "StepSchedule":
        return cls("diminishing", a=float(a), p=float(p))

    @property
    def first(self) -> float:
        return self.gamma0 if self.kind == "constant" else self.a

    def at(self, k: int) -> float:
        return stepsize_at(self, k)

    def values(self, K: int) -> np.ndarray:
        """``gamma_1 .. gamma_K``."""
        if self.kind == "constant":
            return np.full(K, self.gamma0)
        return self.a / np.arange(1, K + 1, dtype=float) ** self.p


def stepsize_at(s: StepSchedule, k: int) -> float:
    if k < 1:
        raise ValueError(f"iterations are numbered from 1, got {k}")
    if s.kind == "constant":
        return s.gamma0
    return s.a / k**s.p


def theorem_cap(rho: float, eta: float, L: float, n: int, lam: float = 0.0) -> float:
    """Largest stepsize admitted by the non-convex rate theorem."""
    return (1.0 - rho) ** 2 / (
        eta * L * (1.0 + rho) ** 2 * max(math.sqrt(1.0 + n**2 * lam**2), 24.0 * n**2 * lam**2)
    )


def tuned_stepsize(D: float, L: float, sigma_s: float, K: int) -> float:
    """Tuned constant stepsize ``D / (sqrt(K) L sigma_s)``."""
    if sigma_s <= 0.0:
        raise ValueError("the tuned stepsize needs sigma_s > 0")
    return D / (math.sqrt(K) * L * sigma_s)


# ---------------------------------------------------------------------------
# Stochastic gradients
# ---------------------------------------------------------------------------


class GradientOracle:
    """Stacked mini-batch gradients ``dF(X; xi)`` for every node.

    Node ``i`` at iteration ``k`` draws its batch from the stream keyed by
    ``(seed, i, k)``, so results do not depend on evaluation order or on the
    executor used to parallelise nodes.
    """

    def __init__(
        self,
        problem: Problem,
        eta: float = 1.0,
        seed: int = 0,
        batch_sizes: Sequence[int] | None = None,
        executor: Executor | None = None,
    ):
        self.problem = problem
        self.eta = float(eta)
        self.seed = int(seed)
        if batch_sizes is None:
            self.batch_sizes = tuple(batch_size(int(s), eta) for s in problem.sizes)
        else:
            self.batch_sizes = tuple(int(b) for b in batch_sizes)
            if len(self.batch_sizes) != problem.n:
                raise ProblemError(f"expected {problem.n} batch sizes, got {len(self.batch_sizes)}")
            for s, b in zip(problem.sizes, self.batch_sizes):
                if not 1 <= b <= s:
                    raise ProblemError(f"batch size {b} out of range for a dataset of {s} samples")
        self.executor = executor

    def batch(self, i: int, k: int) -> np.ndarray:
        ds = self.problem.locals[i]
        if self.batch_sizes[i] == ds.size:
            return np.arange(ds.size)
        return sample_minibatch(ds, self.eta, stream(self.seed, i, k), size=self.batch_sizes[i])

    def node_gradient(self, i: int, x: np.ndarray, k: int) -> np.ndarray:
        return self.problem.stochastic_gradient(i, x, self.batch(i, k))

    def __call__(self, X: np.ndarray, k: int) -> np.ndarray:
        n = self.problem.n
        if self.executor is None or n == 1:
            rows = [self.node_gradient(i, X[i], k) for i in range(n)]
        else:
            rows = list(self.executor.map(lambda i: self.node_gradient(i, X[i], k), range(n)))
        return np.vstack(rows)

    def full(self, X: np.ndarray) -> np.ndarray:
        return np.vstack([self.problem.full_gradient(i, X[i]) for i in range(self.problem.n)])


# ---------------------------------------------------------------------------
# State and steps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlgoState:
    """Iterates of the compact recursion at iteration ``k``.

    ``S`` holds the stochastic gradients drawn at ``X``; ``Y`` is the DSGT
    tracker; ``X_prev`` / ``S_prev`` carry the history of the two-step
    recursions (D^2 and eliminated DSGT).
    """

    X: np.ndarray
    S: np.ndarray
    k: int
    Y: np.ndarray | None = None
    X_prev: np.ndarray | None = None
    S_prev: np.ndarray | None = None
    x0_norm: float = 0.0
    gamma_prev: float | None = None

    @property
    def n(self) -> int:
        return self.X.shape[0]


def _guard(X: np.ndarray, k: int, state: AlgoState, threshold: float) -> None:
    norm = float(np.linalg.norm(X))
    if not np.all(np.isfinite(X)) or not np.isfinite(norm) or norm > threshold * (1.0 + state.x0_norm):
        raise Diverged(k, norm)


def _w(W) -> np.ndarray:
    return W.w if isinstance(W, MixingMatrix) else np.asarray(W, dtype=float)


def init_state(problem: Problem, x0, W, kind: str, oracle: GradientOracle) -> AlgoState:
    """Initial state at ``k = 1``.

    DSGT starts from ``X_1 = W X_0`` with ``Y_1 = S_1``; D-PSGD and D^2 start
    from ``X_1 = X_0`` (D^2 bootstraps its history with one D-PSGD step);
    centralized SGD keeps a single row, the average of ``X_0``.
    """
    if kind not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {kind!r}; expected one of {ALGORITHMS}")
    x0 = np.asarray(x0, dtype=float)
    m = problem.dim
    if kind == "centralized_sgd":
        row = x0.reshape(-1, m).mean(axis=0) if x0.ndim == 2 else x0
        if row.shape != (m,):
            raise ValueError(f"x0 has shape {x0.shape}, expected ({m},)")
        X1 = row[None, :].copy()
        return AlgoState(X1, oracle(X1, 1), 1, x0_norm=float(np.linalg.norm(X1)))
    n = problem.n
    if x0.ndim == 1:
        if x0.shape != (m,):
            raise ValueError(f"x0 has shape {x0.shape}, expected ({m},)")
        X0 = np.tile(x0, (n, 1))
    else:
        if x0.shape != (n, m):
            raise ValueError(f"X0 has shape {x0.shape}, expected ({n}, {m})")
        X0 = x0.copy()
    w = _w(W)
    if w.shape != (n, n):
        raise ValueError(f"mixing matrix is {w.shape}, problem has {n} nodes")
    x0_norm = float(np.linalg.norm(X0))
    if kind in ("dsgt", "dsgt_eliminated"):
        X1 = w @ X0
        S1 = oracle(X1, 1)
        return AlgoState(X1, S1, 1, Y=S1.copy(), x0_norm=x0_norm)
    return AlgoState(X0, oracle(X0, 1), 1, x0_norm=x0_norm)


def dsgt_step(state: AlgoState, W, gamma: float, oracle: GradientOracle, threshold: float = DIVERGENCE_THRESHOLD) -> AlgoState:
    """``X' = W(X - gamma Y)``, fresh batches at ``X'``, ``Y' = W Y + S' - S``."""
    if state.Y is None:
        raise ValueError("DSGT step needs a tracker Y")
    w = _w(W)
    k1 = state.k + 1
    X1 = w @ (state.X - gamma * state.Y)
    _guard(X1, k1, state, threshold)
    S1 = oracle(X1, k1)
    Y1 = w @ state.Y + S1 - state.S
    return replace(state, X=X1, S=S1, Y=Y1, k=k1, X_prev=None, S_prev=None, gamma_prev=gamma)


def _check_constant(state: AlgoState, gamma: float, name: str) -> None:
    if state.gamma_prev is not None and gamma != state.gamma_prev:
        raise ValueError(f"{name} requires a constant stepsize (got {gamma} after {state.gamma_prev})")


def dsgt_step_eliminated(
    state: AlgoState, W, gamma: float, oracle: GradientOracle, threshold: float = DIVERGENCE_THRESHOLD
) -> AlgoState:
    """Tracker-free DSGT: ``X' = 2WX - W^2 X_prev - gamma W (S - S_prev)``.

    The first call has no history and takes one tracker step instead.
    """
    _check_constant(state, gamma, "eliminated DSGT")
    if state.X_prev is None:
        nxt = dsgt_step(state, W, gamma, oracle, threshold)
        return replace(nxt, Y=None, X_prev=state.X, S_prev=state.S)
    w = _w(W)
    k1 = state.k + 1
    X1 = 2.0 * (w @ state.X) - w @ (w @ state.X_prev) - gamma * (w @ (state.S - state.S_prev))
    _guard(X1, k1, state, threshold)
    S1 = oracle(X1, k1)
    return replace(state, X=X1, S=S1, k=k1, X_prev=state.X, S_prev=state.S, gamma_prev=gamma)


def dpsgd_step(state: AlgoState, W, gamma: float, oracle: GradientOracle, threshold: float = DIVERGENCE_THRESHOLD) -> AlgoState:
    """``X' = W X - gamma S``."""
    w = _w(W)
    k1 = state.k + 1
    X1 = w @ state.X - gamma * state.S
    _guard(X1, k1, state, threshold)
    S1 = oracle(X1, k1)
    return replace(state, X=X1, S=S1, k=k1, gamma_prev=gamma)


def d2_step(state: AlgoState, W, gamma: float, oracle: GradientOracle, threshold: float = DIVERGENCE_THRESHOLD) -> AlgoState:
    """``X' = 2WX - W X_prev - gamma W (S - S_prev)``; bootstraps with D-PSGD."""
    _check_constant(state, gamma, "D^2")
    if state.X_prev is None:
        nxt = dpsgd_step(state, W, gamma, oracle, threshold)
        return replace(nxt, X_prev=state.X, S_prev=state.S)
    w = _w(W)
    k1 = state.k + 1
    X1 = 2.0 * (w @ state.X) - w @ state.X_prev - gamma * (w @ (state.S - state.S_prev))
    _guard(X1, k1, state, threshold)
    S1 = oracle(X1, k1)
    return replace(state, X=X1, S=S1, k=k1, X_prev=state.X, S_prev=state.S, gamma_prev=gamma)


def centralized_step(state: AlgoState, W, gamma: float, oracle: GradientOracle, threshold: float = DIVERGENCE_THRESHOLD) -> AlgoState:
    """Mean-normalized mini-batch SGD on the pooled dataset (``W`` is ignored).

    ``oracle`` must wrap the pooled single-node problem with batch size ``M``.
    """
    M = oracle.batch_sizes[0]
    k1 = state.k + 1
    X1 = state.X - (gamma / M) * state.S
    _guard(X1, k1, state, threshold)
    S1 = oracle(X1, k1)
    return replace(state, X=X1, S=S1, k=k1, gamma_prev=gamma)


def centralized_sgd_step(x, pooled: Problem, M: int, gamma_bar: float, rng: np.random.Generator) -> np.ndarray:
    """One step ``x - (gamma_bar / M) * sum of M per-sample gradients``."""
    if pooled.n != 1:
        raise ValueError("centralized SGD runs on a pooled single-node problem")
    N = pooled.total_size
    if not 1 <= M <= N:
        raise ProblemError(f"batch size M={M} out of range [1, {N}]")
    x = np.asarray(x, dtype=float)
    idx = sample_minibatch(pooled.locals[0], 1.0, rng, size=M)
    return x - (gamma_bar / M) * pooled.stochastic_gradient(0, x, idx)


StepFn = Callable[..., AlgoState]

STEPS: dict[str, StepFn] = {
    "dsgt": dsgt_step,
    "dsgt_eliminated": dsgt_step_eliminated,
    "dpsgd": dpsgd_step,
    "d2": d2_step,
    "centralized_sgd": centralized_step,
}


# ---------------------------------------------------------------------------
# D^2 linearization
# ---------------------------------------------------------------------------


class CompanionSpectrum(NamedTuple):
    H: np.ndarray
    eigenvalues: np.ndarray
    spectral_radius: float
    """Largest eigenvalue modulus of ``H``; at least 1 because ``W 1 = 1``."""
    consensus_free_radius: float
    """Radius with the conserved root ``lambda = 1`` of the ``w = 1`` mode removed."""


def d2_companion(W, gamma: float) -> CompanionSpectrum:
    """Linearization of D^2 on full-gradient quadratics.

    ``H = [[(2-gamma) W, -(1-gamma) W], [I, 0]]``.  Its spectrum is the set
    of roots of ``lambda^2 - (2-gamma) w lambda + (1-gamma) w`` over the
    eigenvalues ``w`` of ``W``.  The ``w = 1`` mode always contributes the
    root 1, which is the conserved average rather than an instability, so a
    radius of exactly 1 does not mean divergence.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    w = _w(W)
    n = w.shape[0]
    H = np.block([[(2.0 - gamma) * w, -(1.0 - gamma) * w], [np.eye(n), np.zeros((n, n))]])
    eig = np.linalg.eigvals(H)
    radius = float(np.max(np.abs(eig)))

    wev = np.linalg.eigvals(w)
    one = int(np.argmin(np.abs(wev - 1.0)))
    free = 0.0
    for idx, mu in enumerate(wev):
        roots = np.roots([1.0, -(2.0 - gamma) * mu, (1.0 - gamma) * mu])
        if idx == one:
            roots = np.delete(roots, int(np.argmin(np.abs(roots - 1.0))))
        if roots.size:
            free = max(free, float(np.max(np.abs(roots))))
    return CompanionSpectrum(H, eig, radius, free)


def warn_if_above_cap(gamma: float, cap: float) -> None:
    if gamma > cap * (1.0 + 1e-12):
        warnings.warn(
            f"stepsize {gamma:.6g} exceeds the rate-theorem cap {cap:.6g}; running anyway",
            RuntimeWarning,
            stacklevel=2,
        )
