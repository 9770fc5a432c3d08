"""Per-round BA* state machine: proposal, two-step reduction, binary
agreement, final-committee vote and per-node outcome classification.

Every node's view is built from the reach matrix of the round: a message
emitted by node ``o`` in any step is received by ``v`` iff ``reach[o, v]``.
Values are small integers inside a round: 0 is the empty block and ``k``
is the ``k``-th proposal.
"""
from __future__ import annotations

import csv
import enum
import hashlib
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .agents import Strategy
from .errors import ConfigurationError
from .sortition import (FINAL_STEP, PROPOSER_STEP, Seed, SortitionParams, SortitionProof,
                        select_proposers, sortition_weights, verify_proof)

REDUCTION_STEPS = (1, 2)
FIRST_BINARY_STEP = 3
TIMEOUT = -1


def block_hash(prev_hash: bytes, round: int, tag: bytes) -> bytes:
    return hashlib.sha256(prev_hash + round.to_bytes(8, "big") + tag).digest()


@dataclass(frozen=True)
class Block:
    hash: bytes
    prev_hash: bytes
    round: int
    txn_count: int
    is_empty: bool
    seed: Seed | None = None
    proposer: int = -1

    @classmethod
    def empty(cls, prev_hash: bytes, round: int, seed: Seed | None = None) -> "Block":
        return cls(block_hash(prev_hash, round, b"empty"), prev_hash, round, 0, True, seed)

    @classmethod
    def proposal(cls, prev_hash, round, proposer, txn_count, seed=None) -> "Block":
        tag = b"block" + proposer.to_bytes(8, "big") + txn_count.to_bytes(8, "big")
        return cls(block_hash(prev_hash, round, tag), prev_hash, round, txn_count, False, seed, proposer)


class VoteRecord(NamedTuple):
    voter: int
    round: int
    step: int
    value: bytes
    proof: SortitionProof


@dataclass(frozen=True)
class ConsensusParams:
    vote_threshold: float = 0.685
    final_threshold: float = 0.74
    max_binary_steps: int = 22
    step_deadline: float = 20_000.0

    def __post_init__(self):
        for name in ("vote_threshold", "final_threshold"):
            v = getattr(self, name)
            if not 0.5 < v < 1:
                raise ConfigurationError(f"{name} must lie in (0.5, 1), got {v}")
        if self.max_binary_steps < 1:
            raise ConfigurationError("max_binary_steps must be at least 1")
        if self.step_deadline <= 0:
            raise ConfigurationError("step_deadline must be positive")


class Outcome(enum.Enum):
    FINAL = "F"
    TENTATIVE = "T"
    NO_BLOCK = "N"


@dataclass
class RoundOutcome:
    round: int
    outcome: np.ndarray  # per-node outcome letters
    node_hash: list  # per-node hash (bytes) or None
    agreed: Block | None
    steps_used: int
    block_added: bool
    proposals: list = field(default_factory=list)
    committee_weight: dict = field(default_factory=dict)  # step -> per-node weight

    def fractions(self):
        n = len(self.outcome)
        return tuple(float(np.count_nonzero(self.outcome == o.value)) / n for o in Outcome)

    def final_hashes(self) -> set:
        return {h for o, h in zip(self.outcome, self.node_hash) if o == "F" and h is not None}

    def has_fork(self) -> bool:
        return len(self.final_hashes()) > 1


def tally_votes(votes, value, threshold, verifier=None):
    """Weighted tally of ``votes`` for ``value``.

    ``verifier(vote) -> bool`` screens proofs (all accepted when omitted).
    Only the first vote per ``(voter, step)`` is counted.
    """
    seen = set()
    total = 0
    for v in votes:
        key = (v.voter, v.step)
        if key in seen:
            continue
        seen.add(key)
        if verifier is not None and not verifier(v):
            continue
        if v.value == value:
            total += v.proof.weight
    return total >= threshold, total


def make_verifier(seed: Seed, stakes, params: SortitionParams, total_stake: int):
    def check(vote: VoteRecord) -> bool:
        p = vote.proof
        return (p.node == vote.voter and p.step == vote.step and p.round == vote.round
                and verify_proof(p, seed, int(stakes[vote.voter]), params, total_stake))
    return check


def _tally(reach, voters, weights, votes, n_values):
    """Per-node received vote weight for each value, shape ``(n, n_values)``."""
    if voters.size == 0:
        return np.zeros((reach.shape[1], n_values), dtype=np.float64)
    onehot = np.zeros((voters.size, n_values), dtype=np.float64)
    onehot[np.arange(voters.size), votes] = weights
    return reach[voters].T.astype(np.float64) @ onehot


def _threshold_value(tally, threshold):
    """Value with at least ``threshold`` weight per node, else ``TIMEOUT``."""
    best = np.argmax(tally, axis=1)
    hit = tally[np.arange(tally.shape[0]), best] >= threshold
    return np.where(hit, best, TIMEOUT)


def _coin(seed: Seed, step: int) -> int:
    return hashlib.sha256(b"coin" + seed.value + step.to_bytes(8, "big")).digest()[0] & 1


def propose_round(round, stakes, seed, sortition: SortitionParams, strategies, prev_hash, total_stake,
                  txn_count=0):
    """Proposer sortition; only cooperating winners emit a block.

    Returns ``(proofs, blocks)`` where ``blocks[i]`` belongs to
    ``proofs[i]`` and proofs are ordered by priority.
    """
    proofs = select_proposers(stakes, seed, sortition, total_stake)
    proofs = [p for p in proofs if strategies[p.node] == Strategy.COOPERATE]
    blocks = [Block.proposal(prev_hash, round, p.node, txn_count, seed) for p in proofs]
    return proofs, blocks


def reduction(reach, received_best, step_weights, coop, threshold, n_values):
    """Two committee steps narrowing each node's input to one value or empty.

    ``received_best`` is each node's highest-priority received proposal
    (0 if none). ``step_weights`` maps steps 1 and 2 to per-node weights.
    """
    w1 = step_weights[1] * coop
    v1 = np.flatnonzero(w1)
    t1 = _tally(reach, v1, w1[v1], received_best[v1], n_values)
    out1 = _threshold_value(t1, threshold)
    w2 = step_weights[2] * coop
    v2 = np.flatnonzero(w2)
    vote2 = np.where(out1[v2] == TIMEOUT, 0, out1[v2])
    t2 = _tally(reach, v2, w2[v2], vote2, n_values)
    out2 = _threshold_value(t2, threshold)
    return np.where(out2 == TIMEOUT, 0, out2)


def binary_ba(reach, start, weights_for_step, coop, online, threshold, seed: Seed, max_steps,
              hearable=None):
    """Binary agreement between each node's reduction output and empty.

    Returns ``(decided_value, decided_step, steps_used)``; undecided nodes
    have ``decided_step == 0`` and value ``TIMEOUT``. Nodes that have decided
    keep voting their value in later steps. With ``hearable`` (expected
    cooperating committee weight reaching each node) the loop ends once no
    undecided node can plausibly collect a threshold of votes.
    """
    n = start.size
    n_values = int(start.max()) + 1 if start.size else 1
    r = start.copy()
    decided = np.full(n, TIMEOUT)
    dstep = np.zeros(n, dtype=np.int64)
    live = np.ones(n, bool) if hearable is None else (hearable + 3 * np.sqrt(hearable) >= threshold)
    steps_used = 0
    for s in range(1, max_steps + 1):
        steps_used = s
        w = weights_for_step(FIRST_BINARY_STEP + s - 1) * coop
        voters = np.flatnonzero(w)
        votes = np.where(decided[voters] != TIMEOUT, decided[voters], r[voters])
        tally = _tally(reach, voters, w[voters], votes, n_values)
        got = _threshold_value(tally, threshold)
        open_ = (decided == TIMEOUT) & online
        kind = s % 3
        if kind == 1:
            win = open_ & (got > 0)
            decided[win], dstep[win] = got[win], s
            r = np.where(open_ & (got == TIMEOUT), start, np.where(open_ & (got == 0), 0, r))
        elif kind == 2:
            win = open_ & (got == 0)
            decided[win], dstep[win] = 0, s
            r = np.where(open_ & (got == TIMEOUT), 0, np.where(open_ & (got > 0), got, r))
        else:
            coin = _coin(seed, FIRST_BINARY_STEP + s - 1)
            fallback = start if coin == 0 else np.zeros_like(start)
            r = np.where(open_ & (got == TIMEOUT), fallback, np.where(open_ & (got >= 0), got, r))
        if not np.any((decided == TIMEOUT) & online & live):
            break
    return decided, dstep, steps_used


def hearable_weight(reach, stakes, coop, tau) -> np.ndarray:
    """Expected committee weight of cooperating voters whose messages reach each node."""
    stakes = np.asarray(stakes, dtype=np.float64)
    total = stakes.sum()
    if total <= 0:
        return np.zeros(reach.shape[1])
    w = np.where(coop, stakes, 0.0) / total
    return tau * (w @ reach)


@dataclass
class RoundResult:
    outcome: RoundOutcome
    proposer_weights: np.ndarray
    committee_weights: np.ndarray  # summed over the steps actually run, final included
    final_weights: np.ndarray


def play_round(round: int, stakes, strategies, reach, seed: Seed, sortition: SortitionParams,
               params: ConsensusParams, prev_hash: bytes, txn_count: int = 0,
               final_votes: bool = True) -> RoundResult:
    """Run one full round and classify every node's outcome.

    ``final_votes=False`` withholds the final-committee step.
    """
    stakes = np.asarray(stakes, dtype=np.int64)
    strategies = np.asarray(strategies)
    n = stakes.size
    total = int(stakes.sum())
    online = strategies != Strategy.OFFLINE
    coop = (strategies == Strategy.COOPERATE).astype(np.int64)
    coop_b = coop.astype(bool)

    proofs, blocks = propose_round(round, stakes, seed, sortition, strategies, prev_hash, total, txn_count)
    all_props = select_proposers(stakes, seed, sortition, total)
    prop_w = np.zeros(n, dtype=np.int64)
    for p in all_props:
        prop_w[p.node] = p.weight
    n_values = len(blocks) + 1
    # earliest (best) proposal each node received
    best = np.zeros(n, dtype=np.int64)
    for k in range(len(blocks), 0, -1):
        got = reach[proofs[k - 1].node]
        best[got] = k

    cache = {}

    def weights(step):
        if step not in cache:
            cache[step] = sortition_weights(stakes, step, seed, sortition, total)[0]
        return cache[step]

    thr = params.vote_threshold * sortition.tau_step
    start = reduction(reach, best, {1: weights(1), 2: weights(2)}, coop, thr, n_values)
    start = np.where(online, start, 0)
    hear = hearable_weight(reach, stakes, coop_b, sortition.tau_step)
    decided, dstep, steps_used = binary_ba(reach, start, weights, coop_b, online, thr, seed,
                                           params.max_binary_steps, hear)

    wf = weights(FINAL_STEP) * coop * ((dstep == 1) & (decided > 0)) * final_votes
    fv = np.flatnonzero(wf)
    ftally = _tally(reach, fv, wf[fv], decided[fv], n_values)
    fthr = params.final_threshold * sortition.tau_final
    has = decided != TIMEOUT
    final = has & (decided > 0) & (ftally[np.arange(n), np.maximum(decided, 0)] >= fthr)
    letters = np.where(final, "F", np.where(has, "T", "N"))
    letters[~online] = "N"

    empty = Block.empty(prev_hash, round, seed)
    hashes_by_value = [empty.hash] + [b.hash for b in blocks]
    node_hash = [hashes_by_value[d] if (d != TIMEOUT and online[i]) else None
                 for i, d in enumerate(decided.tolist())]

    agreed, added = None, False
    n_online = int(online.sum())
    vals, counts = np.unique(decided[online & has], return_counts=True)
    nonempty = vals > 0
    if nonempty.any():
        k = vals[nonempty][np.argmax(counts[nonempty])]
        if counts[vals == k][0] * 2 > n_online:
            agreed, added = blocks[k - 1], True
    if agreed is None and (0 in vals) and counts[vals == 0][0] * 2 > n_online:
        agreed = empty

    used_steps = [1, 2] + [FIRST_BINARY_STEP + s for s in range(steps_used)] + [FINAL_STEP]
    comm_w = np.zeros(n, dtype=np.int64)
    for st in used_steps:
        comm_w += weights(st)
    outcome = RoundOutcome(round, letters, node_hash, agreed, steps_used, added, blocks,
                           {st: weights(st) for st in used_steps})
    return RoundResult(outcome, prop_w, comm_w, weights(FINAL_STEP))


def write_outcomes_csv(fh, outcomes):
    """Append ``round,node_id,outcome,block_hash`` rows for each outcome."""
    w = csv.writer(fh, lineterminator="\n")
    for out in outcomes:
        for node, (o, h) in enumerate(zip(out.outcome.tolist(), out.node_hash)):
            w.writerow([out.round, node, o, h.hex() if h is not None else ""])


OUTCOME_HEADER = ["round", "node_id", "outcome", "block_hash"]
