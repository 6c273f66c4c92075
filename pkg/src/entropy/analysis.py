"""Closed-form durability analysis and its Monte Carlo cross-checks.

A group of ``n`` members is tracked by ``b``, the number of Byzantine members.
States ``0..n-k`` are transient; the last state absorbs every path on which
the honest members ever drop below ``k``. One step of the chain is:

1. honest churn: ``C ~ Poisson(lam * honest)`` members leave; if that drops
   the honest count below ``k`` the group is absorbed;
2. eviction: ``upsilon`` of the remaining members are evicted uniformly at
   random (hypergeometric in ``b``); absorbed if honest falls below ``k``;
3. refill: ``C + upsilon`` replacements are drawn without replacement from
   the ``N - members`` non-members, of whom ``F - b_left`` are Byzantine;
   absorbed if the group then holds more than ``n - k`` Byzantine members.

Churned honest nodes are replaced system-wide, so ``N`` and ``F`` stay fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal

import numpy as np


@dataclass(frozen=True)
class GroupModel:
    N: int
    F: int
    n: int
    k: int
    lam: float = 0.0
    upsilon: int = 0
    t: int = 1

    def __post_init__(self):
        if not 0 <= self.F <= self.N:
            raise ValueError("need 0 <= F <= N")
        if not 1 <= self.k <= self.n <= self.N:
            raise ValueError("need 1 <= k <= n <= N")
        if self.lam < 0 or self.upsilon < 0 or self.t < 0:
            raise ValueError("lam, upsilon and t must be non-negative")

    @property
    def states(self) -> int:
        """Transient states plus the absorbing one."""
        return self.n - self.k + 2


# -- hypergeometric pieces ----------------------------------------------------

def hypergeom_pmf(total: int, good: int, draws: int, x: int) -> float:
    if x < 0 or x > good or draws - x > total - good or x > draws:
        return 0.0
    return math.comb(good, x) * math.comb(total - good, draws - x) / math.comb(total, draws)


def initial_vector(N: int, F: int, n: int, k: int) -> np.ndarray:
    """``Pr(B=b)`` for ``b = 0..n-k`` and the tail ``Pr(B > n-k)`` last."""
    head = [hypergeom_pmf(N, F, n, b) for b in range(n - k + 1)]
    tail = math.fsum(hypergeom_pmf(N, F, n, b) for b in range(n - k + 1, n + 1))
    return np.array(head + [tail])


def hypergeom_tail(N: int, F: int, n: int, k: int) -> float:
    """Exact ``Pr(B > n-k)``, the chance a fresh group starts absorbed."""
    return math.fsum(hypergeom_pmf(N, F, n, b) for b in range(n - k + 1, n + 1))


def hoeffding_bound(n: int, k: int) -> float:
    """``exp(-2 (2n/3 - k)^2 / n)``.

    Bounds ``Pr(B > n-k)`` when at most a third of all nodes are Byzantine
    and ``k <= 2n/3``.
    """
    gap = 2 * n / 3 - k
    if gap < 0:
        return 1.0
    return math.exp(-2 * gap * gap / n)


# -- transition matrix --------------------------------------------------------

def _poisson_pmf(mu: float, c: int) -> float:
    if mu == 0:
        return 1.0 if c == 0 else 0.0
    return math.exp(c * math.log(mu) - mu - math.lgamma(c + 1))


def transition_matrix(model: GroupModel) -> np.ndarray:
    """Row-stochastic matrix over ``n - k + 2`` states, absorbing last."""
    N, F, n, k, ups = model.N, model.F, model.n, model.k, model.upsilon
    size = model.states
    absorb = size - 1
    theta = np.zeros((size, size))
    theta[absorb, absorb] = 1.0
    for i in range(n - k + 1):
        row = np.zeros(size)
        honest = n - i
        mu = model.lam * honest
        for c in range(honest - k + 1):
            pc = _poisson_pmf(mu, c)
            if pc == 0.0:
                continue
            remaining = n - c
            evict = min(ups, remaining)
            for eb in range(min(evict, i) + 1):
                pe = hypergeom_pmf(remaining, i, evict, eb)
                if pe == 0.0 or honest - c - (evict - eb) < k:
                    continue
                kept_byz = i - eb
                pool = N - (remaining - evict)
                pool_byz = F - kept_byz
                draws = c + evict
                for new in range(min(draws, pool_byz) + 1):
                    j = kept_byz + new
                    if j > n - k:
                        break
                    pr = hypergeom_pmf(pool, pool_byz, draws, new)
                    row[j] += pc * pe * pr
        row[absorb] = max(0.0, 1.0 - row[: absorb].sum())
        theta[i] = row
    return theta


def absorption_probability(model: GroupModel,
                           form: Literal["power", "sum"] = "power") -> float:
    """Probability a group sits in the absorbing state after ``t`` steps.

    ``form="sum"`` returns ``sum_{T=1..t} (I Theta^T)[absorb]`` instead, a
    looser quantity that counts an absorbed group once per step.
    """
    vec = initial_vector(model.N, model.F, model.n, model.k)
    theta = transition_matrix(model)
    if form == "power":
        return float((vec @ np.linalg.matrix_power(theta, model.t))[-1])
    if form == "sum":
        total, cur = 0.0, vec
        for _ in range(model.t):
            cur = cur @ theta
            total += cur[-1]
        return float(total)
    raise ValueError(f"unknown form {form!r}")


def absorption_curve(model: GroupModel) -> np.ndarray:
    """Absorbed mass after each of ``0..t`` steps."""
    vec = initial_vector(model.N, model.F, model.n, model.k)
    theta = transition_matrix(model)
    out = [vec[-1]]
    for _ in range(model.t):
        vec = vec @ theta
        out.append(vec[-1])
    return np.array(out)


# -- Monte Carlo of the same generative step ----------------------------------

def _hypergeometric(rng: np.random.Generator, good, bad, draws) -> np.ndarray:
    good, bad, draws = np.broadcast_arrays(*(np.asarray(a, dtype=np.int64) for a in (good, bad, draws)))
    out = np.zeros(good.shape, dtype=np.int64)
    live = draws > 0
    if live.any():
        out[live] = rng.hypergeometric(good[live], bad[live], draws[live])
    return out


def mc_step(model: GroupModel, byz: np.ndarray, alive: np.ndarray,
            rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Advance a vector of groups one step; dead groups stay dead."""
    N, F, n, k = model.N, model.F, model.n, model.k
    byz = byz.copy()
    alive = alive.copy()
    honest = n - byz
    c = rng.poisson(model.lam * honest)
    alive &= honest - c >= k
    c = np.where(alive, c, 0)
    remaining = n - c
    evict = np.minimum(model.upsilon, remaining)
    eb = _hypergeometric(rng, byz, remaining - byz, np.where(alive, evict, 0))
    alive &= honest - c - (evict - eb) >= k
    kept = byz - eb
    pool = N - (remaining - evict)
    pool_byz = F - kept
    new = _hypergeometric(rng, pool_byz, pool - pool_byz, np.where(alive, c + evict, 0))
    byz = np.where(alive, kept + new, byz)
    alive &= byz <= n - k
    return byz, alive


def mc_transition_row(model: GroupModel, i: int, trials: int, seed: int = 0) -> np.ndarray:
    """Empirical distribution of one step from state ``i``."""
    rng = np.random.default_rng(seed)
    byz = np.full(trials, i, dtype=np.int64)
    byz, alive = mc_step(model, byz, np.ones(trials, dtype=bool), rng)
    row = np.bincount(byz[alive], minlength=model.states - 1).astype(float)
    row = np.append(row[: model.states - 1], (~alive).sum())
    return row / trials


def mc_absorption(model: GroupModel, trials: int, seed: int = 0) -> tuple[float, float]:
    """Estimate of :func:`absorption_probability` and its standard error."""
    rng = np.random.default_rng(seed)
    byz = rng.hypergeometric(model.F, model.N - model.F, model.n, size=trials).astype(np.int64)
    alive = byz <= model.n - model.k
    for _ in range(model.t):
        byz, alive = mc_step(model, byz, alive, rng)
    p = float((~alive).mean())
    return p, math.sqrt(max(p * (1 - p), 0.0) / trials)


# -- object level and adversarial bounds --------------------------------------

def object_loss_bound(p_group: float, k_outer: int, r_outer: int) -> float:
    """``1 - (1 - p)^(K+R)``: some group of the object is absorbed."""
    if not 0 <= p_group <= 1:
        raise ValueError("p_group must be a probability")
    if p_group == 1:
        return 1.0
    return -math.expm1((k_outer + r_outer) * math.log1p(-p_group))


def attacked_groups(phi: int, n: int, k: int) -> int:
    """Groups an attacker can absorb with ``phi`` takedowns.

    Each group holds about ``2n/3`` honest members when a third of the nodes
    are Byzantine, so absorbing one costs ``2n/3 - k + 1`` takedowns.
    """
    cost = 2 * n / 3 - k + 1
    if cost <= 0:
        raise ValueError("groups start absorbed; k is too large for n")
    return math.floor(phi / cost)


@lru_cache(maxsize=None)
def _log_comb(a: int, b: int) -> float:
    if b < 0 or b > a:
        return -math.inf
    return math.lgamma(a + 1) - math.lgamma(b + 1) - math.lgamma(a - b + 1)


def targeted_attack_bound(omega: int, k_outer: int, r_outer: int, phi_mu: int) -> float:
    """Chance an attacker absorbing ``phi_mu`` groups, blind to which object
    owns which chunk, hits ``R + 1`` chunks of one object.

    ``q`` is the chance a given ``R + 1``-set of absorbed groups lies inside a
    single object; the attacker gets ``C(phi_mu, R+1)`` such sets.
    Computed in log space since the exponent is astronomically large.
    """
    total = k_outer + r_outer
    if omega < 1 or phi_mu < 0:
        raise ValueError("need omega >= 1 and phi_mu >= 0")
    if phi_mu < r_outer + 1:
        return 0.0
    log_q = 0.0
    for i in range(1, r_outer + 1):
        num = total - i
        den = omega * total - i
        if num <= 0:
            return 0.0
        log_q += math.log(num) - math.log(den)
    log_sets = _log_comb(phi_mu, r_outer + 1)
    q = math.exp(log_q)
    if q >= 1:
        return 1.0
    # exponent * log1p(-q) as -exp(log(exponent) + log(-log1p(-q)))
    log_neg = log_sets + math.log(-math.log1p(-q))
    if log_neg > 700:
        return 1.0
    return -math.expm1(-math.exp(log_neg))


def attack_product(omega: int, k_outer: int, r_outer: int) -> float:
    total = k_outer + r_outer
    return math.prod((total - i) / (omega * total - i) for i in range(1, r_outer + 1))
