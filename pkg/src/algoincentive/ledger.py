"""Stake balances, stake-distribution generators and the synthetic
transaction workload.

All balances are integer micro-Algos so that every conservation check is
exact. Node identifiers are the indices ``0 .. n-1`` of the balance array.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._validation import as_int_array, check_positive_int, check_seed
from .errors import ConfigurationError, RoleAssignmentError

MICRO = 1_000_000
TXN_DRAWS_PER_ROUND = 1000
TXN_MAX_DELTA = 4


class StakeLedger:
    """Per-node stake balances in micro-Algos."""

    def __init__(self, balances):
        balances = as_int_array(balances, "balances")
        if balances.size and balances.min() < 0:
            raise ConfigurationError("stake balances must be non-negative")
        self._balances = balances
        self._balances.setflags(write=False)

    @property
    def balances(self) -> np.ndarray:
        return self._balances

    @property
    def node_count(self) -> int:
        return int(self._balances.size)

    @property
    def total_stake(self) -> int:
        """S_N in micro-Algos; always the exact sum of the balances."""
        return int(self._balances.sum())

    def whole_algos(self) -> np.ndarray:
        """Balances truncated to whole Algos (the sortition sub-units)."""
        return self._balances // MICRO

    def credit(self, amounts) -> "StakeLedger":
        """Return a new ledger with ``amounts`` (micro-Algos, per node) added."""
        amounts = as_int_array(amounts, "amounts")
        if amounts.shape != self._balances.shape:
            raise ConfigurationError("credit vector must match the ledger size")
        return StakeLedger(self._balances + amounts)

    def __len__(self):
        return self.node_count

    def __eq__(self, other):
        return isinstance(other, StakeLedger) and np.array_equal(self._balances, other._balances)

    def __repr__(self):
        return f"StakeLedger(nodes={self.node_count}, total_stake={self.total_stake})"

    def to_csv(self, path=None) -> str:
        """Serialize as ``node_id,stake_microalgos``; returns the text."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["node_id", "stake_microalgos"])
        for node, stake in enumerate(self._balances.tolist()):
            writer.writerow([node, stake])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text) -> "StakeLedger":
        if "\n" in str(path_or_text):
            rows = list(csv.DictReader(io.StringIO(path_or_text)))
        else:
            with open(path_or_text, newline="") as fh:
                rows = list(csv.DictReader(fh))
        rows.sort(key=lambda r: int(r["node_id"]))
        ids = [int(r["node_id"]) for r in rows]
        if ids != list(range(len(ids))):
            raise ConfigurationError("node ids in a ledger CSV must be 0..n-1")
        return cls([int(r["stake_microalgos"]) for r in rows])


@dataclass(frozen=True)
class StakeDistributionSpec:
    """Stake distribution in whole Algos.

    ``kind`` is ``"uniform"`` (``a``=lo, ``b``=hi, inclusive integers) or
    ``"normal"`` (``a``=mean, ``b``=stddev, truncated below at 1 Algo).
    """

    kind: str
    node_count: int
    a: float
    b: float

    def __post_init__(self):
        if self.kind not in ("uniform", "normal"):
            raise ConfigurationError(f"unknown stake distribution {self.kind!r}")
        check_positive_int(self.node_count, "node_count")
        if self.kind == "uniform":
            if self.a < 1 or self.b <= self.a:
                raise ConfigurationError(f"Uniform({self.a}, {self.b}) needs lo >= 1 and hi > lo")
        elif self.b < 0:
            raise ConfigurationError("Normal stddev must be non-negative")

    @classmethod
    def uniform(cls, lo, hi, node_count):
        return cls("uniform", node_count, lo, hi)

    @classmethod
    def normal(cls, mean, stddev, node_count):
        return cls("normal", node_count, mean, stddev)

    @property
    def label(self):
        prefix = "U" if self.kind == "uniform" else "N"
        return f"{prefix}({self.a:g},{self.b:g})"


def generate_stakes(spec: StakeDistributionSpec, rng_seed: int) -> StakeLedger:
    rng = np.random.default_rng(check_seed(rng_seed))
    if spec.kind == "uniform":
        algos = rng.integers(int(spec.a), int(spec.b), size=spec.node_count, endpoint=True)
    else:
        algos = np.rint(rng.normal(spec.a, spec.b, size=spec.node_count))
        algos = np.maximum(algos, 1)
    return StakeLedger(algos.astype(np.int64) * MICRO)


class TransactionEvent(NamedTuple):
    node: int
    delta: int  # whole Algos, non-zero, in [-4, 4]


def draw_transactions(ledger: StakeLedger, rng: np.random.Generator, n_draws=TXN_DRAWS_PER_ROUND):
    """Draw ``n_draws`` stake-weighted (node, delta) events; nodes may repeat."""
    total = ledger.total_stake
    if total == 0 or n_draws == 0:
        return []
    p = ledger.balances / total
    nodes = rng.choice(ledger.node_count, size=n_draws, p=p)
    magnitude = rng.integers(1, TXN_MAX_DELTA, size=n_draws, endpoint=True)
    sign = np.where(rng.random(n_draws) < 0.5, -1, 1)
    return [TransactionEvent(int(n), int(d)) for n, d in zip(nodes, magnitude * sign)]


def apply_transactions(ledger: StakeLedger, events):
    """Apply events in order, dropping any that would make a balance negative.

    Returns ``(new_ledger, applied_events)``.
    """
    balances = ledger.balances.copy()
    applied = []
    for ev in events:
        change = ev.delta * MICRO
        if balances[ev.node] + change < 0:
            continue
        balances[ev.node] += change
        applied.append(ev)
    return StakeLedger(balances), applied


def apply_transaction_round(ledger: StakeLedger, rng: np.random.Generator,
                            n_draws=TXN_DRAWS_PER_ROUND) -> StakeLedger:
    if ledger.node_count == 0:
        raise ConfigurationError("transaction round needs a non-empty ledger")
    new, _ = apply_transactions(ledger, draw_transactions(ledger, rng, n_draws))
    return new


class Role(enum.IntEnum):
    LEADER = 0
    COMMITTEE = 1
    OTHER = 2


@dataclass(frozen=True)
class RoleAssignment:
    """Role holdings for one round.

    Each row is one holding: a node, the role it plays, and the stake it
    holds in that role. A node selected for a role holds the sortition
    weight it won in that role and keeps the rest of its balance as an
    ``OTHER`` holding, so a node can appear in two rows. Units are those of
    the ``stakes`` array (the engine uses micro-Algos).
    """

    nodes: np.ndarray
    roles: np.ndarray
    stakes: np.ndarray
    strong: np.ndarray | None = None  # OTHER holdings inside the strong-synchrony set

    def __post_init__(self):
        n = len(self.nodes)
        if len(self.roles) != n or len(self.stakes) != n:
            raise RoleAssignmentError("nodes, roles and stakes must have equal length")
        if self.strong is not None and len(self.strong) != n:
            raise RoleAssignmentError("strong mask must match the holdings")

    @classmethod
    def from_mapping(cls, mapping, strong=None):
        """Build from ``{node: (role, stake)}``; ``strong`` is a set of nodes."""
        items = sorted(mapping.items())
        nodes = np.array([k for k, _ in items], dtype=np.int64)
        roles = np.array([int(Role(v[0])) for _, v in items], dtype=np.int8)
        stakes = np.array([v[1] for _, v in items])
        mask = None if strong is None else np.array([k in strong for k, _ in items])
        return cls(nodes, roles, stakes, mask)

    def mask(self, role: Role) -> np.ndarray:
        return self.roles == int(role)

    def subset(self, keep) -> "RoleAssignment":
        keep = np.asarray(keep, dtype=bool)
        strong = None if self.strong is None else self.strong[keep]
        return RoleAssignment(self.nodes[keep], self.roles[keep], self.stakes[keep], strong)


class StakeSummary(NamedTuple):
    S_L: float
    S_M: float
    S_K: float
    s_l: float
    s_m: float
    s_k: float


def stake_summary(assignment: RoleAssignment) -> StakeSummary:
    """Role stake totals and per-role minimum stakes.

    ``s_k`` is the minimum over the strong-synchrony OTHER holdings when the
    assignment carries a strong mask, otherwise over all OTHER holdings.
    """
    stakes = np.asarray(assignment.stakes)
    lead = assignment.mask(Role.LEADER)
    comm = assignment.mask(Role.COMMITTEE)
    other = assignment.mask(Role.OTHER)
    if not lead.any():
        raise RoleAssignmentError("no leaders in the role assignment")
    if not comm.any():
        raise RoleAssignmentError("no committee members in the role assignment")
    strong_other = other if assignment.strong is None else other & np.asarray(assignment.strong, bool)
    s_k = stakes[strong_other].min() if strong_other.any() else 0
    return StakeSummary(
        stakes[lead].sum().item(),
        stakes[comm].sum().item(),
        stakes[other].sum().item(),
        stakes[lead].min().item(),
        stakes[comm].min().item(),
        s_k.item() if hasattr(s_k, "item") else s_k,
    )
