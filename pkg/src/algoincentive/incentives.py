"""Participation costs, the foundation reward schedule, and the two reward
distribution mechanisms (stake-proportional and role-based).

Money is integer micro-Algos throughout. Splitting a reward over stakes
uses largest-remainder rounding so that totals are exact.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .agents import Strategy
from .errors import ConfigurationError, DistributionError, ScheduleError
from .ledger import MICRO, Role, RoleAssignment, StakeLedger

# Projected rewards per 500K-block period, millions of Algos
FOUNDATION_SCHEDULE_MILLIONS = (10, 13, 16, 19, 22, 25, 28, 31, 34, 36, 38, 38)
BLOCKS_PER_PERIOD = 500_000
FOUNDATION_CEILING_ALGOS = 1_750_000_000

PAY_ONLINE = "pay-online"
PAY_COOPERATORS = "pay-cooperators-only"


@dataclass(frozen=True)
class CostModel:
    """Per-round task costs in micro-Algos.

    The defaults reproduce the aggregate costs c_L=16, c_M=12, c_K=6 and
    c_so=5 used in the numerical evaluation.
    """

    c_ve: int = 0
    c_se: int = 0
    c_so: int = 5
    c_go: int = 1
    c_vs: int = 0
    c_vc: int = 0
    c_bl: int = 10
    c_bs: int = 3
    c_vo: int = 3

    def __post_init__(self):
        for name in ("c_ve", "c_se", "c_so", "c_go", "c_vs", "c_vc", "c_bl", "c_bs", "c_vo"):
            v = getattr(self, name)
            if v < 0 or not math.isfinite(v):
                raise ConfigurationError(f"{name} must be a non-negative cost, got {v}")

    @classmethod
    def from_aggregates(cls, c_L, c_M, c_K, c_so):
        """Build a model from role aggregates; leftovers go to gossip/vote costs."""
        if not c_K >= c_so >= 0:
            raise ConfigurationError("need c_K >= c_so >= 0")
        if c_L < c_K or c_M < c_K:
            raise ConfigurationError("leader and committee costs must include the fixed cost")
        return cls(c_so=c_so, c_go=c_K - c_so, c_bl=c_L - c_K, c_bs=0, c_vo=c_M - c_K)

    @property
    def c_fix(self):
        return self.c_ve + self.c_se + self.c_so + self.c_go + self.c_vs + self.c_vc

    @property
    def c_L(self):
        return self.c_fix + self.c_bl

    @property
    def c_M(self):
        return self.c_fix + self.c_bs + self.c_vo

    @property
    def c_K(self):
        return self.c_fix

    @property
    def c_dual(self):
        """Cost of a node that is both leader and committee member."""
        return self.c_fix + self.c_bl + self.c_bs + self.c_vo

    def is_ordered(self) -> bool:
        return self.c_L > self.c_M > self.c_K > self.c_so > 0

    def cooperation_cost(self, role: Role):
        return {Role.LEADER: self.c_L, Role.COMMITTEE: self.c_M, Role.OTHER: self.c_K}[Role(role)]

    def scaled(self, factor) -> "CostModel":
        return CostModel(**{k: getattr(self, k) * factor for k in self.__dataclass_fields__})


def role_cost(model: CostModel, role: Role, strategy: Strategy):
    if Strategy(strategy) is Strategy.COOPERATE:
        return model.cooperation_cost(role)
    return model.c_so


def schedule_reward(period: int) -> float:
    """Foundation reward per round (Algos) for a 1-based reward period."""
    if not isinstance(period, (int, np.integer)) or not 1 <= period <= len(FOUNDATION_SCHEDULE_MILLIONS):
        raise ScheduleError(f"reward period {period!r} outside 1..{len(FOUNDATION_SCHEDULE_MILLIONS)}")
    return FOUNDATION_SCHEDULE_MILLIONS[period - 1] * 1_000_000 / BLOCKS_PER_PERIOD


def period_of_round(round: int) -> int:
    return (round - 1) // BLOCKS_PER_PERIOD + 1


@dataclass
class RewardPools:
    """Foundation pool drawn down per round; fees only accumulate."""

    foundation_pool: int = FOUNDATION_CEILING_ALGOS * MICRO
    fee_pool: int = 0
    fees_per_round: int = 0
    disbursed: int = 0

    def draw(self, amount: int) -> int:
        """Take up to ``amount`` micro-Algos; never goes below zero."""
        amount = max(0, min(int(amount), self.foundation_pool))
        self.foundation_pool -= amount
        self.disbursed += amount
        return amount

    def collect_fees(self):
        self.fee_pool += self.fees_per_round


@dataclass(frozen=True)
class RewardParameters:
    alpha: float
    beta: float
    gamma: float | None = None
    reward: float = 0.0  # B_i, Algos

    def __post_init__(self):
        gamma = 1.0 - self.alpha - self.beta if self.gamma is None else self.gamma
        object.__setattr__(self, "gamma", gamma)
        for name, v in (("alpha", self.alpha), ("beta", self.beta), ("gamma", gamma)):
            if not 0 < v < 1:
                raise ConfigurationError(f"{name}={v} must lie in (0, 1)")
        if abs(self.alpha + self.beta + gamma - 1.0) > 1e-12:
            raise ConfigurationError("alpha + beta + gamma must equal 1")


def to_micro(algos) -> int:
    """Algos to integer micro-Algos, rounding up so strict bounds stay strict."""
    return int(math.ceil(round(float(algos) * MICRO, 6)))


def apportion(total: int, weights, divisor: int | None = None) -> np.ndarray:
    """Largest-remainder split of ``total`` proportional to integer ``weights``.

    With ``divisor`` larger than ``sum(weights)`` only the share
    ``floor(total * sum(weights) / divisor)`` is handed out, which is what
    an eligible subset of a larger stake base receives. Remainder ties go to
    the lower index.
    """
    w = np.asarray(weights, dtype=np.int64)
    total = int(total)
    if w.size == 0 or total <= 0:
        return np.zeros(w.size, dtype=np.int64)
    if w.min() < 0:
        raise DistributionError("apportion weights must be non-negative")
    wsum = int(w.sum())
    divisor = wsum if divisor is None else int(divisor)
    if divisor <= 0 or wsum == 0:
        return np.zeros(w.size, dtype=np.int64)
    if divisor < wsum:
        raise DistributionError("divisor smaller than the eligible weight")
    target = total * wsum // divisor
    if total * int(w.max()) < 2**62:
        prod = w * total
        base = prod // divisor
        rem = prod % divisor
    else:
        prod = [int(x) * total for x in w.tolist()]
        base = np.array([p // divisor for p in prod], dtype=np.int64)
        rem = np.array([p % divisor for p in prod], dtype=object)
    short = target - int(base.sum())
    if short > 0:
        if rem.dtype == object:
            order = sorted(range(w.size), key=lambda i: (-rem[i], i))[:short]
        else:
            # the short-th largest remainder, then lowest indices among ties
            cut = np.partition(rem, w.size - short)[w.size - short]
            above = np.flatnonzero(rem > cut)
            tied = np.flatnonzero(rem == cut)[: short - above.size]
            order = np.concatenate([above, tied])
        base[np.asarray(order, dtype=np.int64)] += 1
    return base


def distribute_foundation(reward: int, ledger: StakeLedger, online) -> np.ndarray:
    """Stake-proportional payments (micro-Algos) to every online node.

    The per-stake rate is ``reward / S_N`` over the whole ledger, so offline
    stake's share stays in the pool.
    """
    online = np.asarray(online, dtype=bool)
    pay = np.zeros(ledger.node_count, dtype=np.int64)
    if not online.any():
        return pay
    pay[online] = apportion(reward, ledger.balances[online], ledger.total_stake)
    return pay


def split_pools(reward: int, params: RewardParameters) -> tuple[int, int, int]:
    """Split ``reward`` micro-Algos into leader/committee/other pools exactly."""
    scale = 10**15
    shares = [round(params.alpha * scale), round(params.beta * scale)]
    shares.append(scale - sum(shares))
    return tuple(int(x) for x in apportion(reward, shares))


def distribute_role_based(params: RewardParameters, assignment: RoleAssignment, reward: int,
                          eligible=None) -> np.ndarray:
    """Role-based payments per holding (micro-Algos).

    Each role pool is split over that role's eligible holdings in proportion to
    stake. ``eligible`` (per holding, default all) implements the payment
    policy chosen by the caller.
    """
    stakes = np.asarray(assignment.stakes, dtype=np.int64)
    eligible = np.ones(stakes.size, bool) if eligible is None else np.asarray(eligible, bool)
    pay = np.zeros(stakes.size, dtype=np.int64)
    for role, pool in zip((Role.LEADER, Role.COMMITTEE, Role.OTHER), split_pools(reward, params)):
        members = assignment.mask(role) & eligible
        if not assignment.mask(role).any():
            raise DistributionError(f"empty {role.name.lower()} role set")
        if stakes[members].sum() > 0:
            pay[members] = apportion(pool, stakes[members])
    return pay


def payments_by_node(assignment: RoleAssignment, payments, node_count: int) -> np.ndarray:
    return np.bincount(np.asarray(assignment.nodes), weights=np.asarray(payments, dtype=float),
                       minlength=node_count).astype(np.int64)


class PayoffRecord(NamedTuple):
    node: int
    round: int
    reward: int
    cost: int
    payoff: int
    role: Role
    strategy: Strategy


def compute_payoff(node: int, role: Role, strategy: Strategy, payment: int, model: CostModel,
                   round: int = 0, block_added: bool = True) -> PayoffRecord:
    """u = payment - cost; no block means nobody is paid."""
    reward = int(payment) if block_added else 0
    cost = role_cost(model, role, strategy)
    return PayoffRecord(node, round, reward, cost, reward - cost, Role(role), Strategy(strategy))


def write_payments_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "node_id", "role", "strategy", "reward_microalgos", "cost_microalgos",
                    "payoff_microalgos"])
        for r in records:
            w.writerow([r.round, r.node, r.role.name.lower(), r.strategy.letter, r.reward, r.cost, r.payoff])


class FoundationRewardSharing(TransformerMixin, BaseEstimator):
    """Stake-proportional sharing as an estimator.

    ``fit`` learns the per-stake rate ``rate_ = reward / S_N`` from a column
    of stakes (Algos); ``transform`` returns each row's payment in Algos.
    """

    def __init__(self, reward=20.0):
        self.reward = reward

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=1)
        total = X[:, 0].sum()
        if total <= 0:
            raise DistributionError("total stake must be positive")
        self.total_stake_ = float(total)
        self.rate_ = self.reward / total
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "rate_")
        X = check_array(X)
        return X[:, :1] * self.rate_


class RoleBasedRewardSharing(TransformerMixin, BaseEstimator):
    """Role-based sharing with fixed ``alpha``/``beta``.

    ``X`` has two columns: stake (Algos) and role code (0 leader,
    1 committee, 2 other). ``fit`` learns the three per-stake rates.
    """

    def __init__(self, alpha=0.02, beta=0.03, reward=5.2):
        self.alpha = alpha
        self.beta = beta
        self.reward = reward

    def fit(self, X, y=None):
        X = check_array(X)
        if X.shape[1] != 2:
            raise ConfigurationError("X must have columns (stake, role)")
        params = RewardParameters(self.alpha, self.beta, reward=self.reward)
        shares = {Role.LEADER: params.alpha, Role.COMMITTEE: params.beta, Role.OTHER: params.gamma}
        self.rates_ = np.zeros(3)
        for role, share in shares.items():
            total = X[X[:, 1] == role, 0].sum()
            if total <= 0:
                raise DistributionError(f"empty {role.name.lower()} role set")
            self.rates_[role] = share * self.reward / total
        self.gamma_ = params.gamma
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        check_is_fitted(self, "rates_")
        X = check_array(X)
        return (X[:, 0] * self.rates_[X[:, 1].astype(int)])[:, None]
