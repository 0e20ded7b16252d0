"""Per-node empirical risk problems and their exact constants.

Conventions
-----------
Local objectives are *sums* over samples, ``f_i(x) = sum_u l(x; d_u)``, and a
stochastic gradient is the *sum* of per-sample gradients over a mini-batch,
never the mean.  With batch fraction ``eta`` the mini-batch gradient is an
unbiased estimate of ``eta * grad f_i``.  Stepsizes of the decentralized
algorithms are therefore a factor ``N_i`` smaller than the ones familiar
from mean-normalized SGD.

Two losses are built in:

* ``least_squares``: ``l(x; a) = 0.5 * ||x - a||^2`` with targets ``a`` in R^m
  and no features.
* ``logistic``: ``l(x; (v, y)) = ln(1 + exp(v.x)) - y * v.x`` with ``y`` in {0, 1}.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "LOSS_KINDS",
    "LocalDataset",
    "Problem",
    "ProblemConstants",
    "SigmaResult",
    "CentralizedReference",
    "ProblemError",
    "batch_size",
    "partition_dataset",
    "sample_minibatch",
    "sigma_s_oracle",
    "problem_constants",
    "centralized_reference",
    "make_least_squares",
    "make_logistic",
    "read_dataset",
    "write_dataset",
]

LOSS_KINDS = ("least_squares", "logistic")
ENUMERATION_BUDGET = 1_000_000


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class LocalDataset:
    """Samples held by one node.

    For least squares ``targets`` is an ``(N, m)`` array and ``features`` is
    ``None``.  For logistic regression ``features`` is ``(N, d)`` and
    ``targets`` holds the ``N`` labels.
    """

    targets: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self) -> None:
        t = np.array(self.targets, dtype=float)
        if self.features is None:
            if t.ndim == 1:
                t = t[:, None]
            if t.ndim != 2 or t.shape[0] < 1:
                raise ProblemError(f"least-squares targets must be a non-empty (N, m) array, got {t.shape}")
            f = None
        else:
            f = np.array(self.features, dtype=float)
            t = t.reshape(-1)
            if f.ndim != 2 or f.shape[0] != t.shape[0] or t.shape[0] < 1:
                raise ProblemError(f"features {f.shape} and labels {t.shape} disagree")
            if not np.all((t == 0.0) | (t == 1.0)):
                raise ProblemError("logistic labels must be 0 or 1")
            f.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "features", f)

    @property
    def size(self) -> int:
        return self.targets.shape[0]

    def __len__(self) -> int:
        return self.size

    def subset(self, idx) -> "LocalDataset":
        idx = np.asarray(idx, dtype=int)
        return LocalDataset(self.targets[idx], None if self.features is None else self.features[idx])

    @staticmethod
    def concat(parts: Sequence["LocalDataset"]) -> "LocalDataset":
        targets = np.concatenate([p.targets for p in parts])
        if parts[0].features is None:
            return LocalDataset(targets)
        return LocalDataset(targets, np.concatenate([p.features for p in parts]))


def _per_sample_grads(kind: str, ds: LocalDataset, x: np.ndarray, idx=None) -> np.ndarray:
    t = ds.targets if idx is None else ds.targets[idx]
    if kind == "least_squares":
        return x[None, :] - t
    v = ds.features if idx is None else ds.features[idx]
    return (expit(v @ x) - t)[:, None] * v


def _sum_grad(kind: str, ds: LocalDataset, x: np.ndarray, idx=None) -> np.ndarray:
    t = ds.targets if idx is None else ds.targets[idx]
    if kind == "least_squares":
        return t.shape[0] * x - t.sum(axis=0)
    v = ds.features if idx is None else ds.features[idx]
    return v.T @ (expit(v @ x) - t)


def _loss(kind: str, ds: LocalDataset, x: np.ndarray) -> float:
    if kind == "least_squares":
        d = x[None, :] - ds.targets
        return 0.5 * float(np.sum(d * d))
    z = ds.features @ x
    return float(np.sum(np.logaddexp(0.0, z) - ds.targets * z))


@dataclass(frozen=True)
class Problem:
    """A loss kind together with the ``n`` local datasets."""

    loss_kind: str
    locals: tuple[LocalDataset, ...]
    dim: int = field(init=False)

    def __post_init__(self) -> None:
        if self.loss_kind not in LOSS_KINDS:
            raise ProblemError(f"unknown loss kind {self.loss_kind!r}")
        locs = tuple(self.locals)
        if not locs:
            raise ProblemError("a problem needs at least one local dataset")
        if self.loss_kind == "least_squares":
            if any(d.features is not None for d in locs):
                raise ProblemError("least-squares datasets carry no features")
            dims = {d.targets.shape[1] for d in locs}
        else:
            if any(d.features is None for d in locs):
                raise ProblemError("logistic datasets need features")
            dims = {d.features.shape[1] for d in locs}
        if len(dims) != 1:
            raise ProblemError(f"local datasets disagree on dimension: {sorted(dims)}")
        object.__setattr__(self, "locals", locs)
        object.__setattr__(self, "dim", dims.pop())

    @property
    def n(self) -> int:
        return len(self.locals)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([d.size for d in self.locals])

    @property
    def total_size(self) -> int:
        return int(self.sizes.sum())

    def per_sample_gradients(self, i: int, x) -> np.ndarray:
        return _per_sample_grads(self.loss_kind, self.locals[i], np.asarray(x, dtype=float))

    def full_gradient(self, i: int, x) -> np.ndarray:
        """``grad f_i(x)``, the sum of per-sample gradients on node ``i``."""
        return _sum_grad(self.loss_kind, self.locals[i], np.asarray(x, dtype=float))

    def stochastic_gradient(self, i: int, x, xi) -> np.ndarray:
        """Sum of per-sample gradients over the index set ``xi``."""
        return _sum_grad(self.loss_kind, self.locals[i], np.asarray(x, dtype=float), np.asarray(xi, dtype=int))

    def local_loss(self, i: int, x) -> float:
        return _loss(self.loss_kind, self.locals[i], np.asarray(x, dtype=float))

    def loss(self, x) -> float:
        return sum(self.local_loss(i, x) for i in range(self.n))

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return sum(self.full_gradient(i, x) for i in range(self.n))

    def pooled(self) -> "Problem":
        """Single-node problem over the union of all local datasets."""
        return Problem(self.loss_kind, (LocalDataset.concat(self.locals),))


class SigmaResult(NamedTuple):
    sigma_i_sq: np.ndarray
    sigma_s_sq: float
    exact: bool
    """False when the value is a max over probe points (a lower bound on the sup)."""


@dataclass(frozen=True)
class ProblemConstants:
    L_i: np.ndarray
    L: float
    eta: float
    lam: float
    sigma_i_sq: np.ndarray
    sigma_s_sq: float
    L_tilde: float
    c_l: float
    sigma_exact: bool
    batch_sizes: tuple[int, ...]


class CentralizedReference(NamedTuple):
    x_star: np.ndarray
    f_star: float
    L_c: float
    sigma_sq: float
    numeric: bool


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def batch_size(size: int, eta: float) -> int:
    """``round(eta * size)`` with halves rounded up; must land in ``[1, size]``."""
    b = int(math.floor(eta * size + 0.5))
    if not 1 <= b <= size:
        raise ProblemError(f"batch fraction {eta} gives batch size {b} for a dataset of {size} samples")
    return b


def sample_minibatch(ds: LocalDataset | int, eta: float, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Uniform sample without replacement of ``round(eta * N_i)`` indices.

    ``size`` overrides the proportional rule (equal-batch ablations).  A full
    batch returns ``arange(N_i)`` without touching ``rng``.
    """
    n_i = ds if isinstance(ds, int) else ds.size
    b = batch_size(n_i, eta) if size is None else int(size)
    if not 1 <= b <= n_i:
        raise ProblemError(f"batch size {b} out of range for a dataset of {n_i} samples")
    if b == n_i:
        return np.arange(n_i)
    return rng.permutation(n_i)[:b]


def partition_dataset(
    data: LocalDataset,
    n: int,
    proportions: Sequence[float] | None = None,
    seed: int = 0,
    shuffle: bool = True,
) -> list[LocalDataset]:
    """Shuffle by ``seed`` (unless ``shuffle`` is False) and split contiguously
    by rounded cumulative proportions."""
    if n < 1:
        raise ProblemError(f"need n >= 1 nodes, got {n}")
    props = np.full(n, 1.0 / n) if proportions is None else np.asarray(proportions, dtype=float)
    if props.shape != (n,):
        raise ProblemError(f"expected {n} proportions, got {props.size}")
    if np.any(props < 0) or abs(props.sum() - 1.0) > 1e-9:
        raise ProblemError(f"proportions must be nonnegative and sum to 1, got {props.tolist()}")
    total = data.size
    bounds = np.floor(np.cumsum(props) * total + 0.5).astype(int)
    bounds[-1] = total
    starts = np.concatenate([[0], bounds[:-1]])
    sizes = bounds - starts
    if np.any(sizes < 1):
        i = int(np.flatnonzero(sizes < 1)[0])
        raise ProblemError(f"node {i} would receive no samples ({total} samples, proportions {props.tolist()})")
    perm = np.random.default_rng(seed).permutation(total) if shuffle else np.arange(total)
    return [data.subset(perm[s:e]) for s, e in zip(starts, bounds)]


# ---------------------------------------------------------------------------
# Variance oracle and constants
# ---------------------------------------------------------------------------


def _node_variance_closed(g: np.ndarray, b: int) -> float:
    # finite-population variance of a without-replacement sum of b rows
    n_i = g.shape[0]
    if n_i == 1 or b == n_i:
        return 0.0
    c = g - g.mean(axis=0)
    pop = float(np.sum(c * c)) / n_i
    return b * (n_i - b) / (n_i - 1) * pop


def _node_variance_enum(g: np.ndarray, b: int, chunk: int = 65_536) -> float:
    n_i = g.shape[0]
    mean = g.sum(axis=0) * (b / n_i)
    total = 0.0
    count = 0
    combos = itertools.combinations(range(n_i), b)
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=int)
        if block.size == 0:
            break
        sums = g[block].sum(axis=1)
        d = sums - mean
        total += float(np.sum(d * d))
        count += block.shape[0]
    return total / count


def sigma_s_oracle(
    p: Problem,
    eta: float,
    x=None,
    probes: Sequence[np.ndarray] | None = None,
    batch_sizes: Sequence[int] | None = None,
    method: str = "auto",
    budget: int = ENUMERATION_BUDGET,
) -> SigmaResult:
    """Exact variance of each node's mini-batch gradient.

    ``sigma_i^2 = E || s_i - E[s_i] ||^2`` where ``s_i`` is the sum over a
    uniform without-replacement batch of ``b_i`` samples.  When ``eta * N_i``
    is an integer the mean is exactly ``eta * grad f_i``.

    Parameters
    ----------
    x, probes
        Evaluation point(s).  With several probes the per-node maximum is
        returned and flagged as inexact (a lower bound on the supremum).
        Least squares ignores the point: its deviation does not involve x.
    method
        ``"enumerate"`` averages over every mini-batch (raises if some
        ``C(N_i, b_i)`` exceeds ``budget``), ``"closed"`` uses the
        finite-population formula, ``"auto"`` enumerates when affordable.
    """
    if method not in ("auto", "enumerate", "closed"):
        raise ProblemError(f"unknown variance method {method!r}")
    pts = [np.zeros(p.dim)] if x is None and probes is None else []
    if x is not None:
        pts.append(np.asarray(x, dtype=float))
    if probes is not None:
        pts.extend(np.asarray(q, dtype=float) for q in probes)
    if p.loss_kind == "least_squares":
        pts = pts[:1]
    sizes = p.sizes
    bs = [batch_size(int(s), eta) for s in sizes] if batch_sizes is None else [int(b) for b in batch_sizes]
    out = np.zeros(p.n)
    for i, (n_i, b) in enumerate(zip(sizes, bs)):
        n_combos = math.comb(int(n_i), b)
        use_enum = method == "enumerate" or (method == "auto" and n_combos <= budget)
        if method == "enumerate" and n_combos > budget:
            raise ProblemError(f"node {i}: C({n_i}, {b}) = {n_combos} exceeds enumeration budget {budget}")
        best = 0.0
        for q in pts:
            g = p.per_sample_gradients(i, q)
            v = _node_variance_enum(g, b) if use_enum else _node_variance_closed(g, b)
            best = max(best, v)
        out[i] = best
    if p.loss_kind == "least_squares":
        # deviation never involves x; guard the claim
        shifted = np.full(p.dim, 5.0)
        for i, (n_i, b) in enumerate(zip(sizes, bs)):
            alt = _node_variance_closed(p.per_sample_gradients(i, shifted), b)
            assert abs(alt - out[i]) <= 1e-9 * (1.0 + out[i]), "least-squares variance depends on x"
    exact = p.loss_kind == "least_squares" or len(pts) == 1
    return SigmaResult(out, float(out.sum()), exact)


def lipschitz_constants(p: Problem) -> tuple[np.ndarray, float]:
    """Per-node smoothness constants and the per-sample constant ``c_l``."""
    if p.loss_kind == "least_squares":
        return p.sizes.astype(float), 1.0
    sq = [np.sum(d.features * d.features, axis=1) for d in p.locals]
    return np.array([s.sum() / 4.0 for s in sq]), float(max(s.max() for s in sq) / 4.0)


def problem_constants(
    p: Problem,
    eta: float,
    probes: Sequence[np.ndarray] | None = None,
    batch_sizes: Sequence[int] | None = None,
) -> ProblemConstants:
    """``L_i``, ``L``, variances and ``L_tilde`` for a problem and batch fraction.

    Both built-in losses have bounded stochastic-gradient deviation, so the
    growth coefficient ``lambda`` is 0 and ``L_tilde = L``.
    """
    L_i, c_l = lipschitz_constants(p)
    L = float(L_i.max())
    bs = tuple(batch_size(int(s), eta) for s in p.sizes) if batch_sizes is None else tuple(int(b) for b in batch_sizes)
    sig = sigma_s_oracle(p, eta, probes=probes, batch_sizes=bs)
    lam = 0.0
    return ProblemConstants(
        L_i=L_i,
        L=L,
        eta=float(eta),
        lam=lam,
        sigma_i_sq=sig.sigma_i_sq,
        sigma_s_sq=sig.sigma_s_sq,
        L_tilde=L * math.sqrt(1.0 + p.n**2 * lam**2),
        c_l=c_l,
        sigma_exact=sig.exact,
        batch_sizes=bs,
    )


def _logistic_minimizer(p: Problem, tol: float, max_iter: int) -> np.ndarray:
    # Newton with backtracking on the pooled logistic loss
    ds = LocalDataset.concat(p.locals)
    v, y = ds.features, ds.targets
    x = np.zeros(p.dim)
    f = _loss("logistic", ds, x)
    for _ in range(max_iter):
        z = v @ x
        s = expit(z)
        g = v.T @ (s - y)
        if np.linalg.norm(g) <= tol:
            return x
        h = (v * (s * (1.0 - s))[:, None]).T @ v
        try:
            step = np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(h, g, rcond=None)[0]
        t = 1.0
        while t > 1e-12:
            cand = x - t * step
            fc = _loss("logistic", ds, cand)
            if fc <= f - 1e-4 * t * float(g @ step):
                break
            t *= 0.5
        else:
            cand = x - t * step
            fc = _loss("logistic", ds, cand)
        if not np.isfinite(fc):
            break
        x, f = cand, fc
    raise ProblemError(f"logistic reference solve did not reach ||grad|| <= {tol} in {max_iter} iterations")


def centralized_reference(
    p: Problem,
    probes: Sequence[np.ndarray] | None = None,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> CentralizedReference:
    """Minimizer, optimal value, global smoothness and per-sample variance.

    ``sigma_sq`` is ``max_x ||J_N r(x)||^2 / N`` over the probe points, i.e.
    the variance of one uniformly drawn per-sample gradient of the pooled
    dataset.  For least squares it does not depend on x.
    """
    pooled = LocalDataset.concat(p.locals)
    pp = Problem(p.loss_kind, (pooled,))
    L_i, _ = lipschitz_constants(p)
    L_c = float(L_i.sum())
    if p.loss_kind == "least_squares":
        x_star = pooled.targets.mean(axis=0)
        numeric = False
    else:
        x_star = _logistic_minimizer(p, tol, max_iter)
        numeric = True
    f_star = pp.loss(x_star)
    pts = [np.zeros(p.dim), x_star] + [np.asarray(q, dtype=float) for q in (probes or [])]
    if p.loss_kind == "least_squares":
        pts = pts[:1]
    sigma_sq = 0.0
    for q in pts:
        g = pp.per_sample_gradients(0, q)
        c = g - g.mean(axis=0)
        sigma_sq = max(sigma_sq, float(np.sum(c * c)) / pooled.size)
    return CentralizedReference(x_star, float(f_star), L_c, sigma_sq, numeric)


# ---------------------------------------------------------------------------
# Synthetic data and CSV files
# ---------------------------------------------------------------------------


def make_least_squares(n_samples: int, dim: int = 1, seed: int = 0, low: float = 0.0, high: float = 1.0) -> LocalDataset:
    """Targets drawn uniformly from ``[low, high)^dim``."""
    rng = np.random.default_rng(seed)
    return LocalDataset(rng.uniform(low, high, size=(n_samples, dim)))


def make_logistic(n_samples: int, dim: int = 2, seed: int = 0, separation: float = 1.0) -> LocalDataset:
    """Two overlapping Gaussian blobs at ``+-separation/2`` along a random direction."""
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    y = rng.integers(0, 2, size=n_samples).astype(float)
    centers = np.outer(2.0 * y - 1.0, direction) * (separation / 2.0)
    v = centers + rng.standard_normal((n_samples, dim))
    return LocalDataset(y, v)


def read_dataset(path, kind: str) -> LocalDataset:
    """CSV with a header row.

    Least-squares rows are ``target_0,...,target_{m-1}``; logistic rows are
    ``y,v_0,...,v_{d-1}``.
    """
    if kind not in LOSS_KINDS:
        raise ProblemError(f"unknown loss kind {kind!r}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ProblemError(f"{path}: need a header row and at least one sample")
    width = len(rows[0])
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise ProblemError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
        try:
            data.append([float(v) for v in row])
        except ValueError:
            raise ProblemError(f"{path}:{lineno}: non-numeric value in {row}") from None
    arr = np.array(data)
    if kind == "least_squares":
        return LocalDataset(arr)
    if width < 2:
        raise ProblemError(f"{path}: logistic rows need a label and at least one feature")
    return LocalDataset(arr[:, 0], arr[:, 1:])


def write_dataset(ds: LocalDataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if ds.features is None:
            w.writerow([f"target_{j}" for j in range(ds.targets.shape[1])])
            w.writerows([[repr(float(v)) for v in row] for row in ds.targets])
        else:
            w.writerow(["y"] + [f"v_{j}" for j in range(ds.features.shape[1])])
            for y, row in zip(ds.targets, ds.features):
                w.writerow([repr(float(y))] + [repr(float(v)) for v in row])
