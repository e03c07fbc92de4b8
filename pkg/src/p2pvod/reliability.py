"""Replica lifetime under a birth-death chain with an absorbing empty state.

State k in {0..n} is the number of live replicas of one movie. From state k
a replica is lost at rate k*fail_rate and a lost one is rebuilt at rate
(n-k)*repair_rate; state 0 has no way out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


class SingularChainError(RuntimeError):
    pass


@dataclass(frozen=True)
class CtmcParams:
    n: int
    fail_rate: float
    repair_rate: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not self.fail_rate > 0:
            raise ValueError("fail_rate must be > 0")
        if self.repair_rate < 0:
            raise ValueError("repair_rate must be >= 0")
        if not math.isfinite(self.gamma):
            raise ValueError("repair/fail ratio must be finite")

    @property
    def gamma(self) -> float:
        return self.repair_rate / self.fail_rate

    @classmethod
    def from_gamma(cls, n: int, fail_rate: float, gamma: float) -> "CtmcParams":
        return cls(n, fail_rate, gamma * fail_rate)


@dataclass(frozen=True)
class ReliabilityConstraints:
    max_replicas: int
    max_repair_time_s: float
    max_bandwidth: float  # bytes per second
    replica_bytes: float

    def __post_init__(self):
        if min(self.max_replicas, self.max_repair_time_s, self.max_bandwidth, self.replica_bytes) <= 0:
            raise ValueError("all reliability constraints must be positive")


def down_rate(p: CtmcParams, k: int) -> float:
    return k * p.fail_rate


def up_rate(p: CtmcParams, k: int) -> float:
    return (p.n - k) * p.repair_rate if 1 <= k < p.n else 0.0


def build_generator(p: CtmcParams) -> np.ndarray:
    """(n+1)x(n+1) rate matrix; rows sum to zero, row 0 is all zeros."""
    n = p.n
    g = np.zeros((n + 1, n + 1))
    for k in range(1, n + 1):
        g[k, k - 1] = down_rate(p, k)
        if k < n:
            g[k, k + 1] = up_rate(p, k)
        g[k, k] = -g[k].sum()
    return g


def expected_times(p: CtmcParams) -> np.ndarray:
    """T_0..T_n, the expected time to reach state 0 from each state.

    Solves the first-step system ``T_k = 1/r_k + sum_j P(k->j) T_j`` with
    ``T_0 = 0``. Because the chain only steps down one level at a time, the
    system eliminates from the top: the mean passage time from k to k-1 is
    ``tau_k = (1 + up_k * tau_{k+1}) / down_k`` and ``T_k`` is the sum of
    ``tau_1..tau_k``. Every term is positive, so no precision is lost to
    cancellation even when repair is much faster than failure.
    """
    n = p.n
    tau = np.zeros(n + 2)
    for k in range(n, 0, -1):
        tau[k] = (1.0 + up_rate(p, k) * tau[k + 1]) / down_rate(p, k)
    t = np.concatenate(([0.0], np.cumsum(tau[1 : n + 1])))
    if not np.all(np.isfinite(t)) or t[-1] <= 0:
        raise SingularChainError("absorption time is not finite and positive")
    return t


def mean_time_to_failure(p: CtmcParams) -> float:
    """Expected time to reach state 0 (no live replica) from state n."""
    return float(expected_times(p)[-1])


def mean_time_to_failure_dense(p: CtmcParams) -> float:
    """Same quantity from a dense solve of ``-G_tt T = 1`` over the transient states.

    Kept as an independent check; it loses accuracy once the answer spans
    many orders of magnitude.
    """
    g = build_generator(p)
    try:
        t = np.linalg.solve(-g[1:, 1:], np.ones(p.n))
    except np.linalg.LinAlgError as exc:
        raise SingularChainError(str(exc)) from exc
    if not np.all(np.isfinite(t)) or t[-1] <= 0:
        raise SingularChainError("absorption time is not finite and positive")
    return float(t[-1])


def absorption_probabilities(p: CtmcParams) -> np.ndarray:
    """Q_0..Q_n: probability of hitting 0 before n, with Q_0 = 1 and Q_n = 0.

    Interior values solve ``Q_k = p_k Q_{k-1} + (1-p_k) Q_{k+1}`` with
    ``p_k = k*lam / (k*lam + (n-k)*mu)`` as one tridiagonal system.
    """
    n = p.n
    q = np.zeros(n + 1)
    q[0] = 1.0
    if n == 1:
        return q
    m = n - 1
    a = np.zeros((m, m))
    b = np.zeros(m)
    for k in range(1, n):
        i = k - 1
        dn, up = down_rate(p, k), up_rate(p, k)
        pk = dn / (dn + up)
        a[i, i] = 1.0
        if k - 1 >= 1:
            a[i, i - 1] = -pk
        else:
            b[i] += pk  # Q_0 = 1
        if k + 1 <= n - 1:
            a[i, i + 1] = -(1.0 - pk)
        # Q_n = 0 contributes nothing
    q[1:n] = np.linalg.solve(a, b)
    return q


def absorption_path_probability(p: CtmcParams, k: int) -> float:
    if not 1 <= k <= p.n - 1:
        raise ValueError(f"k must lie in [1, {p.n - 1}], got {k}")
    return float(absorption_probabilities(p)[k])


def qstar_closed_form(n: int, gamma: float) -> tuple[float, float]:
    """Literal ``Q* = sum_{k=0}^{n-1} gamma**k / C(n-1, k)`` and ``n_e = 1 / Q*``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    qs = sum(gamma ** k / math.comb(n - 1, k) for k in range(n))
    return qs, 1.0 / qs


@dataclass(frozen=True)
class LifetimeDecomposition:
    n_e: float
    t_e: float  # derived as T_s / n_e
    t_s: float


def lifetime_decomposition(p: CtmcParams) -> LifetimeDecomposition:
    """Split the exact MTTF as ``T_s = n_e * t_e`` with ``n_e`` from the closed form."""
    t_s = mean_time_to_failure(p)
    _, n_e = qstar_closed_form(p.n, p.gamma)
    return LifetimeDecomposition(n_e, t_s / n_e, t_s)


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    half_width: float  # 95% normal-approximation half-width
    trials: int

    def covers(self, value: float) -> bool:
        return abs(self.mean - value) <= self.half_width


def _lifetimes_by_level(p: CtmcParams, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Exact absorption-time draws without walking every jump.

    A skip-free chain falls from n to 0 through one first passage per level,
    k -> k-1. Each passage visits k a Geometric(p_k) number of times and
    makes one passage k+1 -> k after every visit but the last. Counting
    passages level by level from the bottom gives the visit count V_k of
    every state as a negative binomial, and the total time spent in k is
    Gamma(V_k, rate r_k).
    """
    n = p.n
    total = np.zeros(trials)
    passages = np.ones(trials, dtype=np.int64)
    for k in range(1, n + 1):
        dn, up = down_rate(p, k), up_rate(p, k)
        pk = dn / (dn + up)
        visits = passages + (rng.negative_binomial(passages, pk) if pk < 1.0 else 0)
        total += rng.gamma(visits.astype(float), 1.0 / (dn + up))
        passages = 1 + (visits - passages)
    return total


def _lifetimes_by_path(p: CtmcParams, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Walk the jump chain one transition at a time (slow; small chains only)."""
    out = np.empty(trials)
    for i in range(trials):
        k, t = p.n, 0.0
        while k > 0:
            dn, up = down_rate(p, k), up_rate(p, k)
            t += rng.exponential(1.0 / (dn + up))
            k = k - 1 if rng.random() * (dn + up) < dn else k + 1
        out[i] = t
    return out


def monte_carlo_lifetime(
    p: CtmcParams,
    trials: int,
    stream: Optional[np.random.Generator] = None,
    method: str = "levels",
) -> MonteCarloEstimate:
    """Sampled mean absorption time from state n with a 95% half-width.

    ``method="levels"`` draws per-state visit counts and holding times in
    aggregate; ``method="path"`` simulates every transition.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = stream if stream is not None else np.random.default_rng(0)
    if method == "levels":
        draws = _lifetimes_by_level(p, trials, rng)
    elif method == "path":
        draws = _lifetimes_by_path(p, trials, rng)
    else:
        raise ValueError(f"unknown method {method!r}")
    mean = float(draws.mean())
    hw = 1.96 * float(draws.std(ddof=1)) / math.sqrt(trials) if trials > 1 else math.inf
    return MonteCarloEstimate(mean, hw, trials)


@dataclass(frozen=True)
class BandwidthVerdict:
    bandwidth: float  # bytes per second
    bandwidth_ok: bool
    replicas_ok: bool
    repair_time_ok: bool

    @property
    def ok(self) -> bool:
        return self.bandwidth_ok and self.replicas_ok and self.repair_time_ok


def repair_traffic(eta: int, replica_bytes: float, p: CtmcParams) -> float:
    """Bytes per second spent re-creating ``eta`` replicas; zero without repair."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    if p.repair_rate == 0:
        return 0.0
    return eta * replica_bytes / (1.0 / p.fail_rate + 1.0 / p.repair_rate)


def repair_bandwidth(eta: int, constraints: ReliabilityConstraints, p: CtmcParams) -> BandwidthVerdict:
    """Average re-creation traffic for ``eta`` replicas of ``replica_bytes`` each.

    Every replica is rebuilt once per lifecycle of mean length
    ``1/fail_rate + 1/repair_rate``. Without repair the cycle never closes,
    so the bandwidth is zero and the repair-time bound fails.
    """
    phi = repair_traffic(eta, constraints.replica_bytes, p)
    repair_time = 1.0 / p.repair_rate if p.repair_rate > 0 else math.inf
    return BandwidthVerdict(
        bandwidth=phi,
        bandwidth_ok=phi <= constraints.max_bandwidth,
        replicas_ok=eta <= constraints.max_replicas,
        repair_time_ok=eta == 0 or repair_time <= constraints.max_repair_time_s,
    )
