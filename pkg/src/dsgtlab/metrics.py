"""Convergence metrics and closed-form rate bounds.

``R(k)`` is the stepsize-weighted average of ``||grad f(xbar_t)||^2 + n L^2
||X_t - 1 xbar_t^T||_F^2``; the convex counterpart ``R_c(k)`` averages
``f(xbar_t) - f* + (L/2) ||X_t - 1 xbar_t^T||_F^2``.  Traces keep single-run
values; expectations are estimated by averaging over seeds.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .algorithms import AlgoState, StepSchedule, theorem_cap
from .problems import Problem

__all__ = [
    "MetricsRecord",
    "MetricsTracker",
    "BoundConstants",
    "Bound",
    "make_bound_constants",
    "consensus_error",
    "theorem1_bound",
    "theorem1_bound_curve",
    "corollary_bound",
    "diminishing_coefficients",
    "convex_bound",
    "rc_metric",
    "network_term_ratio",
    "theta_upper",
    "rate_fit",
]


def consensus_error(X: np.ndarray) -> float:
    d = X - X.mean(axis=0)
    return float(np.sum(d * d))


@dataclass(frozen=True)
class MetricsRecord:
    k: int
    gamma: float
    loss: float
    grad_norm_sq: float
    consensus_err: float
    tracking_residual: float
    running_R: float
    running_Rc: float
    gap: float

    def as_dict(self) -> dict:
        return asdict(self)


class MetricsTracker:
    """Incrementally maintains ``R(k)`` and ``R_c(k)`` along one trajectory.

    Call :meth:`record` once per iteration, in order, even when only every
    ``stride``-th record is written out.
    """

    def __init__(self, problem: Problem, L: float, f_star: float | None = None, node_grads: bool = False):
        self.problem = problem
        self.L = float(L)
        self.f_star = f_star
        self.node_grads = node_grads
        self._num_R = 0.0
        self._num_Rc = 0.0
        self._den = 0.0
        self.min_node_grad = math.inf
        self.min_R = math.inf

    def record(self, state: AlgoState, gamma: float) -> MetricsRecord:
        X = state.X
        n = X.shape[0]
        xbar = X.mean(axis=0)
        c = consensus_error(X)
        g = self.problem.gradient(xbar)
        gsq = float(g @ g)
        loss = self.problem.loss(xbar)
        if state.Y is not None:
            resid = float(np.linalg.norm(state.Y.mean(axis=0) - state.S.mean(axis=0))) / (1.0 + float(np.linalg.norm(state.S)))
        else:
            resid = 0.0
        self._den += gamma
        self._num_R += gamma * (gsq + n * self.L**2 * c)
        gap = math.nan if self.f_star is None else loss - self.f_star
        if self.f_star is not None:
            self._num_Rc += gamma * (gap + 0.5 * self.L * c)
        running_R = self._num_R / self._den if self._den > 0 else gsq + n * self.L**2 * c
        if self.f_star is None:
            running_Rc = math.nan
        elif self._den > 0:
            running_Rc = self._num_Rc / self._den
        else:
            running_Rc = gap + 0.5 * self.L * c
        self.min_R = min(self.min_R, running_R)
        if self.node_grads:
            vals = [float(np.sum(self.problem.gradient(X[i]) ** 2)) for i in range(n)]
            self.min_node_grad = min(self.min_node_grad, sum(vals) / (2.0 * n))
        return MetricsRecord(state.k, float(gamma), loss, gsq, c, resid, running_R, running_Rc, gap)


# ---------------------------------------------------------------------------
# Bound constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundConstants:
    """Inputs and derived constants of the rate theorems.

    ``consensus1`` is ``||X_1 - 1 xbar_1^T||_F^2`` and ``tracker_dev1`` is
    ``E||Y_1 - 1 ybar_1^T||_F^2`` (a realized value or an exact expectation).
    ``gamma1`` enters ``C``.
    """

    rho: float
    eta: float
    n: int
    L: float
    lam: float
    sigma_s_sq: float
    f1_gap: float
    consensus1: float
    tracker_dev1: float
    gamma1: float
    e1: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rate bounds need 0 <= rho < 1, got {self.rho}")
        for name in ("eta", "L"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def L_tilde(self) -> float:
        return self.L * math.sqrt(1.0 + self.n**2 * self.lam**2)

    @property
    def D(self) -> float:
        return math.sqrt(self.n * self.L * max(self.f1_gap, 0.0))

    @property
    def cap(self) -> float:
        return theorem_cap(self.rho, self.eta, self.L, self.n, self.lam)

    @property
    def theta(self) -> float:
        rho = self.rho
        q = rho * self.cap * self.eta * self.L_tilde
        return 2 * rho**2 / (1 + rho**2) + 2 * q**2 / (1 - rho**2) + 2 * q * math.sqrt(q**2 + 2 * (1 + rho) ** 2) / (1 - rho**2)

    @property
    def C(self) -> float:
        rho, s = self.rho, math.sqrt(self.rho)
        return (2 * s * self.L_tilde / (1 - s)) * self.consensus1 + (
            2 * self.L_tilde * rho**2 * (1 + rho) * self.gamma1**2 / (1 - s) ** 3
        ) * self.tracker_dev1

    @property
    def C1(self) -> float:
        rho = self.rho
        return 4 * self.n * rho**2 * (self.eta * self.L_tilde) ** 2 / (1 - rho**2) ** 2

    @property
    def C2(self) -> float:
        return 8 * self.rho**2 * self.sigma_s_sq / (1 - self.rho**2)

    @property
    def C3(self) -> float:
        return 12 * self.n * self.rho**2 * (self.eta * self.lam) ** 2 / (1 - self.rho**2)

    def C0_of_k(self, k: int) -> float:
        rho, th = self.rho, self.theta
        if rho == 0.0:
            return self.consensus1 if k == 0 else 0.0
        return th**k * (self.consensus1 + 2 * rho**2 * self.gamma1**2 * k / ((1 - rho**2) * th) * self.tracker_dev1)

    @property
    def C_tilde_0(self) -> float:
        rho, th, g = self.rho, self.theta, self.gamma1
        return g * th / (1 - th) * self.consensus1 + 2 * rho**2 * g**3 / ((1 - rho**2) * (1 - th) ** 2) * self.tracker_dev1

    def with_gamma1(self, gamma1: float) -> "BoundConstants":
        return replace(self, gamma1=float(gamma1))

    def admits(self, schedule: StepSchedule) -> bool:
        return schedule.first <= self.cap * (1.0 + 1e-12)

    def as_dict(self) -> dict:
        out = asdict(self)
        out.update(L_tilde=self.L_tilde, D=self.D, cap=self.cap, theta=self.theta, C=self.C,
                   C1=self.C1, C2=self.C2, C3=self.C3, C_tilde_0=self.C_tilde_0)
        return out


def make_bound_constants(
    rho: float,
    eta: float,
    n: int,
    L: float,
    sigma_s_sq: float,
    f1_gap: float,
    consensus1: float,
    tracker_dev1: float,
    gamma1: float,
    lam: float = 0.0,
    e1: float | None = None,
) -> BoundConstants:
    return BoundConstants(float(rho), float(eta), int(n), float(L), float(lam), float(sigma_s_sq),
                          float(f1_gap), float(consensus1), float(tracker_dev1), float(gamma1), e1)


class Bound(NamedTuple):
    value: float
    valid: bool
    """False when the hypotheses (stepsize cap, corollary K threshold) are not met."""


def _network_coef(c: BoundConstants) -> float:
    rho = c.rho
    return 96 * rho**2 * (1 + math.sqrt(rho)) ** 2 * c.n * c.L * c.L_tilde * c.sigma_s_sq / (1 - rho) ** 3


def theorem1_bound_curve(c: BoundConstants, schedule: StepSchedule, K: int) -> np.ndarray:
    """Right side of the non-convex rate theorem for every ``K' = 1..K``."""
    g = schedule.values(K)
    s1, s2, s3 = np.cumsum(g), np.cumsum(g**2), np.cumsum(g**3)
    cc = c.with_gamma1(schedule.first)
    const = 12 * c.n * c.L * cc.gamma1 * cc.C + 12 * c.D**2 / (c.eta * c.L)
    return (9 * c.L * c.sigma_s_sq / c.eta * s2 + _network_coef(c) * s3 + const) / s1


def theorem1_bound(c: BoundConstants, schedule: StepSchedule, K: int) -> Bound:
    """Upper bound on ``R(K)``; ``valid`` is False if ``gamma_1`` exceeds the cap."""
    return Bound(float(theorem1_bound_curve(c, schedule, K)[-1]), c.admits(schedule))


def network_term_ratio(c: BoundConstants, schedule: StepSchedule, K: int) -> np.ndarray:
    """Ratio of the topology-dependent ``sum gamma^3`` term to the ``sum gamma^2`` term."""
    g = schedule.values(K)
    rho = c.rho
    num = 96 * rho**2 * (1 + math.sqrt(rho)) ** 2 * c.n * c.L * c.L_tilde / (1 - rho) ** 3 * np.cumsum(g**3)
    den = 9 * c.L / c.eta * np.cumsum(g**2)
    return num / den


def theta_upper(rho: float) -> float:
    """``(sqrt(rho) + rho) / (1 + rho)``, the claimed ceiling on ``theta``."""
    return (math.sqrt(rho) + rho) / (1 + rho)


def diminishing_coefficients(a: float, p: float, k: int) -> tuple[float, float]:
    """``(c2, c3)`` bounding ``sum gamma_t^2`` and ``sum gamma_t^3`` for ``gamma_t = a/t^p``."""
    if not 0.5 <= p <= 1.0:
        raise ValueError(f"p must lie in [0.5, 1], got {p}")
    c2 = a**2 * (math.log(k) + 1) if p == 0.5 else 2 * a**2 * p / (2 * p - 1)
    c3 = 3 * a**3 * p / (3 * p - 1)
    return c2, c3


def corollary_bound(c: BoundConstants, regime: str, *, gamma0: float | None = None,
                    K: int | None = None, a: float | None = None, p: float | None = None,
                    k: int | None = None) -> Bound:
    """Closed forms for constant, tuned-constant and diminishing stepsizes.

    ``regime`` is ``"constant"`` (``gamma0``, ``K``), ``"tuned"`` (``K``;
    stepsize ``D / (sqrt(K) L sigma_s)``) or ``"diminishing"`` (``a``, ``p``,
    ``k``).  For ``p = 1`` the prefactor ``(1-p)/(k^(1-p) - 1)`` is replaced
    by its limit ``1 / ln k``.
    """
    eta, L, n = c.eta, c.L, c.n
    sig2 = c.sigma_s_sq
    net = _network_coef(c)
    if regime == "constant":
        cc = c.with_gamma1(gamma0)
        val = (12 * c.D**2 / (K * eta * L * gamma0) + 9 * L * sig2 * gamma0 / eta
               + net * gamma0**2 + 12 * n * L * cc.C / K)
        return Bound(val, gamma0 <= c.cap * (1 + 1e-12))
    if regime == "tuned":
        sig = math.sqrt(sig2)
        if sig == 0.0:
            raise ValueError("tuned stepsize needs sigma_s > 0")
        gamma0 = c.D / (math.sqrt(K) * L * sig)
        cc = c.with_gamma1(gamma0)
        rho, lam = c.rho, c.lam
        k_min = (eta * c.D * (1 + math.sqrt(rho)) ** 2 / (sig * (1 - rho) ** 2)
                 * max((11 * rho**2 * n + 1) * math.sqrt(1 + n**2 * lam**2) / (1 - rho), 24 * n**2 * lam**2)) ** 2
        val = 30 * c.D * sig / (eta * math.sqrt(K)) + 12 * n * L * cc.C / K
        return Bound(val, K >= k_min)
    if regime == "diminishing":
        if not 0.5 <= p <= 1.0:
            raise ValueError(f"p must lie in [0.5, 1], got {p}")
        if k < 2:
            raise ValueError("the diminishing-stepsize bound needs k >= 2")
        c2, c3 = diminishing_coefficients(a, p, k)
        cc = c.with_gamma1(a)
        pre = 1.0 / (a * math.log(k)) if p == 1.0 else (1 - p) / (a * (k ** (1 - p) - 1))
        body = 12 * c.D**2 / (eta * L) + 9 * L * sig2 * c2 / eta + net * c3 + 12 * n * L * a * cc.C
        return Bound(pre * body, a < c.cap)
    raise ValueError(f"unknown regime {regime!r}")


def convex_bound(c: BoundConstants, schedule: StepSchedule, K: int) -> Bound:
    """Right side of the convex rate theorem (first term uses ``||xbar_1 - x*||^2``)."""
    if c.e1 is None:
        raise ValueError("convex bound needs e1 = ||xbar_1 - x*||^2")
    g = schedule.values(K)
    rho = c.rho
    cc = c.with_gamma1(schedule.first)
    val = (3 * c.n * c.e1 / c.eta + 5 * c.sigma_s_sq / (c.eta * c.n) * np.sum(g**2)
           + 48 * rho**2 * (1 + math.sqrt(rho)) ** 2 * c.L_tilde * c.sigma_s_sq / (1 - rho) ** 3 * np.sum(g**3)
           + 6 * cc.gamma1 * cc.C) / np.sum(g)
    return Bound(float(val), c.admits(schedule))


def rc_metric(trajectory: Sequence[MetricsRecord] | Sequence[tuple[float, float, float]],
              f_star: float | None, L: float) -> float:
    """``R_c`` over a trajectory of records or ``(gamma, loss, consensus_err)`` triples."""
    if f_star is None:
        raise ValueError("R_c needs the optimal value f*")
    num = den = 0.0
    for item in trajectory:
        if isinstance(item, MetricsRecord):
            gamma, loss, cons = item.gamma, item.loss, item.consensus_err
        else:
            gamma, loss, cons = item
        num += gamma * (loss - f_star + 0.5 * L * cons)
        den += gamma
    return num / den


def rate_fit(Ks: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of ``log(value)`` against ``log(K)``."""
    K = np.asarray(Ks, dtype=float)
    v = np.asarray(values, dtype=float)
    if K.size < 3 or K.size != v.size:
        raise ValueError("rate fit needs at least 3 (K, value) pairs")
    if np.any(v <= 0) or np.any(K <= 0):
        raise ValueError("rate fit needs positive K and values")
    slope, _ = np.polyfit(np.log(K), np.log(v), 1)
    return float(slope)
