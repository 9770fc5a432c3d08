"""Simulated cryptographic sortition with replayable proofs.

A node's stake is split into whole-Algo sub-units, each an independent
Bernoulli trial with success probability ``tau / S_N``. Instead of hashing
every sub-unit, one keyed hash per (seed, round, step, node) is mapped to a
uniform variate and pushed through the inverse binomial CDF, which yields
the same weight distribution. The step key is derived with SHA-256; the
per-node hash is a vectorised SplitMix64 chain keyed by it, so a whole
network can be drawn in one numpy pass and any single proof can be
recomputed by a verifier.
"""
from __future__ import annotations

import functools
import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import binom

from .errors import ConfigurationError, SequencingError
from .ledger import MICRO

PROPOSER_STEP = 0
FINAL_STEP = 10_000

_REFRESH_TAG = b"algoincentive/seed-refresh"
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@dataclass(frozen=True)
class Seed:
    value: bytes
    round: int

    def __post_init__(self):
        if len(self.value) != 32:
            raise ConfigurationError("seed values are 256-bit")


def genesis_seed(master_seed: int) -> Seed:
    return Seed(hashlib.sha256(b"genesis" + int(master_seed).to_bytes(8, "big")).digest(), 0)


def next_seed(prev: Seed, round: int, refresh_interval: int = 1000) -> Seed:
    if round != prev.round + 1:
        raise SequencingError(f"seed for round {round} cannot follow round {prev.round}")
    h = hashlib.sha256(prev.value + round.to_bytes(8, "big"))
    if refresh_interval and round % refresh_interval == 0:
        h = hashlib.sha256(_REFRESH_TAG + h.digest())
    return Seed(h.digest(), round)


@dataclass(frozen=True)
class SortitionParams:
    tau_proposer: float = 26.0
    tau_step: float = 1000.0
    tau_final: float = 10000.0
    refresh_interval: int = 1000
    max_proposers: int = 70

    def __post_init__(self):
        if min(self.tau_proposer, self.tau_step, self.tau_final) <= 0:
            raise ConfigurationError("sortition tau values must be positive")
        if self.tau_final < self.tau_step:
            raise ConfigurationError("tau_final must be at least tau_step")

    def tau(self, step: int) -> float:
        if step == PROPOSER_STEP:
            return self.tau_proposer
        if step == FINAL_STEP:
            return self.tau_final
        return self.tau_step


@dataclass(frozen=True)
class SortitionProof:
    node: int
    round: int
    step: int
    weight: int
    output: int  # the keyed hash driving the trials
    priority: Optional[int] = None  # proposer proofs only; smaller wins


def _mix64(x: np.ndarray) -> np.ndarray:
    x = x ^ (x >> np.uint64(30))
    x = x * _M1
    x = x ^ (x >> np.uint64(27))
    x = x * _M2
    return x ^ (x >> np.uint64(31))


def step_key(seed: Seed, step: int) -> np.uint64:
    digest = hashlib.sha256(seed.value + seed.round.to_bytes(8, "big") + step.to_bytes(8, "big")).digest()
    return np.uint64(int.from_bytes(digest[:8], "big"))


@functools.lru_cache(maxsize=4)
def _node_premix(n: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        out = _mix64(np.arange(n, dtype=np.uint64) + _GOLDEN)
    out.setflags(write=False)
    return out


def node_hashes(seed: Seed, step: int, nodes=None, n=None) -> np.ndarray:
    """One 64-bit hash per node for ``(seed, step)``; ``nodes=None`` means ``arange(n)``."""
    with np.errstate(over="ignore"):
        if nodes is None:
            pre = _node_premix(int(n))
        else:
            pre = _mix64(np.asarray(nodes, dtype=np.uint64) + _GOLDEN)
        return _mix64(pre ^ step_key(seed, step))


def _uniforms(hashes: np.ndarray) -> np.ndarray:
    return ((hashes >> np.uint64(11)).astype(np.float64) + 0.5) / 2.0**53


def _weights_from_hashes(hashes, sub_units, p) -> np.ndarray:
    sub_units = np.asarray(sub_units, dtype=np.int64)
    weights = np.zeros(sub_units.shape, dtype=np.int64)
    if p <= 0:
        return weights
    if p >= 1:
        return sub_units.copy()
    u = _uniforms(hashes)
    # P(weight = 0) = (1-p)^n; only the rest need the inverse CDF
    zero_mass = np.exp(sub_units * np.log1p(-p))
    hit = (u > zero_mass) & (sub_units > 0)
    if hit.any():
        weights[hit] = binom.ppf(u[hit], sub_units[hit], p).astype(np.int64)
    return weights


def selection_probability(params: SortitionParams, step: int, total_stake: int) -> float:
    """Per-sub-unit success probability; ``total_stake`` in micro-Algos."""
    total_units = total_stake // MICRO
    if total_units <= 0:
        return 0.0
    return min(1.0, params.tau(step) / total_units)


def sortition_weights(stakes, step: int, seed: Seed, params: SortitionParams,
                      total_stake: int, nodes=None):
    """Vectorised sortition over many nodes.

    ``stakes`` and ``total_stake`` are micro-Algos. Returns
    ``(weights, hashes)`` aligned with ``nodes`` (default ``arange``).
    """
    stakes = np.asarray(stakes, dtype=np.int64)
    hashes = node_hashes(seed, step, nodes, n=stakes.size)
    p = selection_probability(params, step, total_stake)
    return _weights_from_hashes(hashes, stakes // MICRO, p), hashes


def proof_priority(node: int, round: int, output: int, weight: int) -> int:
    """Minimum over the selected sub-units of a 256-bit hash."""
    best = None
    prefix = output.to_bytes(8, "big") + node.to_bytes(8, "big") + round.to_bytes(8, "big")
    for j in range(1, weight + 1):
        h = int.from_bytes(hashlib.sha256(prefix + j.to_bytes(8, "big")).digest(), "big")
        if best is None or h < best:
            best = h
    return best


def make_proof(node: int, round: int, step: int, weight: int, output: int) -> SortitionProof:
    priority = proof_priority(node, round, output, weight) if step == PROPOSER_STEP else None
    return SortitionProof(node, round, step, weight, output, priority)


def run_sortition(node: int, stake: int, step: int, seed: Seed, params: SortitionParams,
                  total_stake: int) -> SortitionProof | None:
    """Sortition for one node; ``None`` when no sub-unit is selected."""
    if stake < 0:
        raise ConfigurationError("stake must be non-negative")
    weights, hashes = sortition_weights([stake], step, seed, params, total_stake, nodes=[node])
    if weights[0] == 0:
        return None
    return make_proof(node, seed.round, step, int(weights[0]), int(hashes[0]))


def verify_proof(proof: SortitionProof, seed: Seed, stake: int, params: SortitionParams,
                 total_stake: int) -> bool:
    try:
        if proof.round != seed.round or proof.weight < 1 or stake < 0:
            return False
        weights, hashes = sortition_weights([stake], proof.step, seed, params, total_stake,
                                            nodes=[proof.node])
    except (TypeError, ValueError, AttributeError, OverflowError):
        return False
    if int(hashes[0]) != proof.output or proof.weight > int(weights[0]):
        return False
    if proof.step == PROPOSER_STEP:
        return proof.priority == proof_priority(proof.node, proof.round, proof.output, proof.weight)
    return proof.priority is None


def verify_weights(nodes, weights, outputs, stakes, step, seed, params, total_stake) -> np.ndarray:
    """Batch form of :func:`verify_proof` for non-proposer steps."""
    nodes = np.asarray(nodes)
    true_w, true_h = sortition_weights(stakes, step, seed, params, total_stake, nodes=nodes)
    weights = np.asarray(weights)
    return (np.asarray(outputs, dtype=np.uint64) == true_h) & (weights >= 1) & (weights <= true_w)


def select_proposers(stakes, seed: Seed, params: SortitionParams, total_stake: int):
    """All proposer proofs for a round, capped at ``max_proposers``.

    Sorted by priority (ties by node id); the lowest-priority proofs beyond
    the cap are dropped.
    """
    weights, hashes = sortition_weights(stakes, PROPOSER_STEP, seed, params, total_stake)
    proofs = [make_proof(int(n), seed.round, PROPOSER_STEP, int(weights[n]), int(hashes[n]))
              for n in np.flatnonzero(weights)]
    proofs.sort(key=lambda pr: (pr.priority, pr.node))
    return proofs[: params.max_proposers]
