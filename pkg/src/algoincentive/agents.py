"""Strategy assignment and per-strategy participation rules."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from ._validation import check_fraction, check_seed
from .errors import ConfigurationError


class Strategy(enum.IntEnum):
    COOPERATE = 0
    DEFECT = 1
    OFFLINE = 2

    @property
    def letter(self):
        return "CDO"[self]


@dataclass(frozen=True)
class FixedSet:
    defectors: Sequence[int]
    offline: Sequence[int] = ()


@dataclass(frozen=True)
class RandomFraction:
    """A uniformly random ``floor(rate * N)`` subset defects.

    The subset is a prefix of one permutation drawn from ``seed``, so for a
    fixed seed a higher rate always contains the lower rate's defectors.
    """

    rate: float
    seed: int = 0

    def __post_init__(self):
        check_fraction(self.rate, "defection rate")
        check_seed(self.seed)


@dataclass(frozen=True)
class PayoffThreshold:
    """Myopic best response against last round's per-stake reward rates.

    ``rates`` maps role name (``"leader"``, ``"committee"``, ``"other"``) to
    Algos per Algo of stake; ``pay_defectors`` says whether defecting online
    nodes would still be paid.
    """

    cost_model: object
    rates: dict = field(default_factory=dict)
    pay_defectors: bool = True


class BehaviorProfile(NamedTuple):
    round: int
    strategies: np.ndarray  # Strategy codes, int8

    def count(self, s: Strategy) -> int:
        return int(np.sum(self.strategies == s))


def assign_behaviors(policy, ledger, round: int, roles=None) -> BehaviorProfile:
    """Fix every node's strategy for ``round``.

    ``roles`` (optional, per-node ``Role`` codes) lets the payoff-threshold
    policy price each node at its own role cost; without it every node is
    priced as an ordinary online node.
    """
    n = ledger.node_count
    strat = np.zeros(n, dtype=np.int8)
    if isinstance(policy, FixedSet):
        strat[np.asarray(policy.defectors, dtype=np.int64)] = Strategy.DEFECT
        strat[np.asarray(policy.offline, dtype=np.int64)] = Strategy.OFFLINE
    elif isinstance(policy, RandomFraction):
        check_fraction(policy.rate, "defection rate")
        k = int(np.floor(policy.rate * n + 1e-9))
        order = np.random.default_rng(policy.seed).permutation(n)
        strat[order[:k]] = Strategy.DEFECT
    elif isinstance(policy, PayoffThreshold):
        strat = _best_response(policy, ledger, roles)
    else:
        raise ConfigurationError(f"unknown behavior policy {policy!r}")
    strat.setflags(write=False)
    return BehaviorProfile(round, strat)


def _best_response(policy: PayoffThreshold, ledger, roles):
    from .ledger import MICRO, Role

    model = policy.cost_model
    stake = ledger.balances / MICRO
    if roles is None:
        roles = np.full(ledger.node_count, int(Role.OTHER))
    roles = np.asarray(roles)
    names = {Role.LEADER: "leader", Role.COMMITTEE: "committee", Role.OTHER: "other"}
    rate = np.zeros(ledger.node_count)
    cost = np.zeros(ledger.node_count)
    for role, name in names.items():
        m = roles == role
        rate[m] = policy.rates.get(name, 0.0)
        cost[m] = model.cooperation_cost(role) / MICRO
    other_rate = policy.rates.get("other", 0.0)
    coop = rate * stake - cost
    defect = (other_rate * stake if policy.pay_defectors else 0.0) - model.c_so / MICRO
    return np.where(coop < defect, Strategy.DEFECT, Strategy.COOPERATE).astype(np.int8)


class Participation(NamedTuple):
    propose: bool
    vote: bool
    relay: bool
    reachable: bool
    reward_eligible: bool
    runs_sortition: bool = True


def execute_strategy(strategy: Strategy, is_leader: bool = False, is_committee: bool = False,
                     pay_defectors: bool = True) -> Participation:
    strategy = Strategy(strategy)
    if strategy is Strategy.COOPERATE:
        return Participation(is_leader, is_committee, True, True, True)
    if strategy is Strategy.DEFECT:
        return Participation(False, False, False, True, pay_defectors)
    return Participation(False, False, False, False, False)
