"""Gossip network: topology, event-driven flooding and synchrony classification."""
from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from ._validation import check_fraction, check_mask, check_positive_int, check_seed
from .errors import ConfigurationError

DEFAULT_STEP_DEADLINE_MS = 20_000.0


@dataclass(frozen=True)
class PeerGraph:
    """Directed peer graph; ``adjacency[i]`` lists node ``i``'s out-peers."""

    adjacency: np.ndarray

    @property
    def node_count(self) -> int:
        return int(self.adjacency.shape[0])

    @property
    def out_degree(self) -> int:
        return int(self.adjacency.shape[1])

    def edges(self):
        src = np.repeat(np.arange(self.node_count), self.out_degree)
        return src, self.adjacency.ravel()

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.adjacency.ravel(), minlength=self.node_count)


def build_topology(node_count: int, out_degree: int, rng_seed: int, min_in_degree: int = 1) -> PeerGraph:
    """Random digraph where every node has ``out_degree`` distinct out-peers.

    Out-peers are drawn uniformly without replacement. Nodes left with fewer
    than ``min_in_degree`` in-links are then repaired by redirecting a
    random edge whose target has spare in-links, which keeps every node
    reachable while leaving the out-degree exact.
    """
    check_positive_int(node_count, "node_count")
    check_positive_int(out_degree, "out_degree")
    if out_degree >= node_count:
        raise ConfigurationError(f"out_degree {out_degree} must be below node_count {node_count}")
    rng = np.random.default_rng(check_seed(rng_seed))
    # sample from n-1 slots and shift past self to exclude self-loops
    keys = rng.random((node_count, node_count - 1))
    picks = np.argpartition(keys, out_degree - 1, axis=1)[:, :out_degree] if out_degree < node_count - 1 \
        else np.tile(np.arange(node_count - 1), (node_count, 1))
    picks = np.sort(picks, axis=1)
    adj = picks + (picks >= np.arange(node_count)[:, None])
    if min_in_degree > 0:
        _repair_in_degree(adj, min_in_degree, rng)
    return PeerGraph(adj.astype(np.int64))


def _repair_in_degree(adj, min_in, rng):
    n, d = adj.shape
    indeg = np.bincount(adj.ravel(), minlength=n)
    for orphan in np.flatnonzero(indeg < min_in):
        while indeg[orphan] < min_in:
            src_ok = ~np.any(adj == orphan, axis=1)
            src_ok[orphan] = False
            cand = np.argwhere(src_ok[:, None] & (indeg[adj] > min_in))
            if cand.size == 0:
                return
            u, slot = cand[rng.integers(len(cand))]
            indeg[adj[u, slot]] -= 1
            adj[u, slot] = orphan
            indeg[orphan] += 1


@dataclass(frozen=True)
class DelayModel:
    """Per-link message delay in milliseconds."""

    kind: str = "uniform"
    lo: float = 50.0
    hi: float = 500.0

    def __post_init__(self):
        if self.kind not in ("constant", "uniform"):
            raise ConfigurationError(f"unknown delay model {self.kind!r}")
        if self.lo < 0 or self.hi < self.lo:
            raise ConfigurationError("delays need 0 <= lo <= hi")

    @classmethod
    def constant(cls, d):
        return cls("constant", d, d)

    @property
    def max_delay(self) -> float:
        return self.hi

    def sample(self, rng: np.random.Generator, size=None):
        if self.kind == "constant" or self.lo == self.hi:
            return np.full(size, self.lo) if size is not None else self.lo
        return rng.uniform(self.lo, self.hi, size)


class MessageKind(enum.Enum):
    TRANSACTION = "transaction"
    VOTE = "vote"
    BLOCK_PROPOSAL = "block_proposal"
    CREDENTIAL = "credential"


@dataclass(frozen=True)
class NetMessage:
    kind: MessageKind
    origin: int
    payload: Any = None
    emit_time: float = 0.0


def propagate(graph: PeerGraph, msg: NetMessage, relayers, delay: DelayModel, deadline: float,
              rng: np.random.Generator | None = None, online=None) -> np.ndarray:
    """Event-driven flood of one message.

    The origin always sends to its out-peers; any other node forwards once
    only if ``relayers`` holds for it. Offline nodes never receive. Returns
    per-node arrival times (ms, absolute); ``inf`` marks nodes not reached
    by ``msg.emit_time + deadline``.
    """
    if deadline <= 0:
        raise ConfigurationError("deadline must be positive")
    n = graph.node_count
    relay = check_mask(relayers, n, "relayers")
    up = check_mask(online, n, "online")
    rng = rng if rng is not None else np.random.default_rng(0)
    limit = msg.emit_time + deadline
    arrival = np.full(n, np.inf)
    seq = 0
    heap = [(msg.emit_time, seq, msg.origin)]
    while heap:
        t, _, node = heapq.heappop(heap)
        if arrival[node] <= t:
            continue
        arrival[node] = t
        if node != msg.origin and not relay[node]:
            continue
        peers = graph.adjacency[node]
        hops = t + np.asarray(delay.sample(rng, len(peers)), dtype=float)
        for peer, ta in zip(peers.tolist(), hops.tolist()):
            if up[peer] and ta <= limit and ta < arrival[peer]:
                seq += 1
                heapq.heappush(heap, (ta, seq, peer))
    return arrival


def reach_matrix(graph: PeerGraph, relayers, delay: DelayModel, deadline: float,
                 online=None, rng: np.random.Generator | None = None) -> np.ndarray:
    """``R[o, v]``: does a message emitted by online node ``o`` reach ``v`` in time.

    Reachability over relaying nodes is computed for all origins at once on
    packed bitsets, one hop level per pass. When the number of hop levels
    times the maximum link delay fits inside the deadline every path is in
    time, and the closure is exact. Otherwise each origin is flooded with
    :func:`propagate`.
    """
    n = graph.node_count
    relay = check_mask(relayers, n, "relayers")
    up = check_mask(online, n, "online")
    relay = relay & up
    words = (n + 63) // 64
    bits = np.zeros((n, words), dtype=np.uint64)
    idx = np.arange(n)
    bits[idx, idx // 64] |= np.left_shift(np.uint64(1), (idx % 64).astype(np.uint64))
    bits[~up] = 0
    src, dst = graph.edges()
    first = up[src] & up[dst]
    # first hop: every online origin sends to its online out-peers
    np.bitwise_or.at(bits, dst[first], bits[src[first]])
    hop_edges = relay[src] & up[dst]
    e_src, e_dst = src[hop_edges], dst[hop_edges]
    order = np.argsort(e_dst, kind="stable")
    e_src, e_dst = e_src[order], e_dst[order]
    starts = np.flatnonzero(np.r_[True, e_dst[1:] != e_dst[:-1]]) if e_dst.size else np.array([], int)
    targets = e_dst[starts]
    hops = 1
    while e_dst.size:
        gathered = np.bitwise_or.reduceat(bits[e_src], starts, axis=0)
        merged = bits[targets] | gathered
        if np.array_equal(merged, bits[targets]):
            break
        bits[targets] = merged
        hops += 1
    if hops * delay.max_delay <= deadline:
        recv = np.unpackbits(bits.view(np.uint8), axis=1, bitorder="little")[:, :n].astype(bool)
        return np.ascontiguousarray(recv.T)
    rng = rng if rng is not None else np.random.default_rng(0)
    out = np.zeros((n, n), dtype=bool)
    for o in np.flatnonzero(up):
        arr = propagate(graph, NetMessage(MessageKind.VOTE, int(o)), relay, delay, deadline, rng, up)
        out[o] = np.isfinite(arr)
    return out


class SynchronyClass(enum.Enum):
    STRONG = "strong"
    WEAK = "weak"
    ASYNC = "async"


@dataclass
class SynchronyReport:
    round: int
    reached_fraction: np.ndarray  # per honest sender, share of honest nodes reached
    classification: SynchronyClass
    strong_set: list = field(default_factory=list)


def _satisfies(sub: np.ndarray, threshold: float) -> bool:
    if sub.shape[0] == 0:
        return False
    frac = sub.mean(axis=1)
    return bool(np.mean(frac >= threshold) >= threshold)


def extract_strong_set(reach: np.ndarray, members, threshold=0.95, drop_fraction=0.01):
    """Greedy largest subset satisfying the threshold/threshold reach condition.

    Repeatedly drops the worst-connected nodes (lowest of send and receive
    reach inside the current set, ties by node id).
    """
    current = np.asarray(sorted(members), dtype=np.int64)
    while current.size:
        sub = reach[np.ix_(current, current)]
        if _satisfies(sub, threshold):
            return current.tolist()
        score = np.minimum(sub.mean(axis=1), sub.mean(axis=0))
        k = max(1, int(math.ceil(drop_fraction * current.size)))
        drop = np.lexsort((current, score))[:k]
        current = np.delete(current, drop)
    return []


def classify_round(strong: bool, history: Sequence[SynchronyClass] = (), weak_bound: int = 10):
    """STRONG when the reach test passes; otherwise WEAK if a strong round
    occurred within the last ``weak_bound`` rounds, else ASYNC."""
    if strong:
        return SynchronyClass.STRONG
    recent = list(history)[-weak_bound:] if weak_bound > 0 else []
    return SynchronyClass.WEAK if SynchronyClass.STRONG in recent else SynchronyClass.ASYNC


def classify_synchrony(reach, honest_set, threshold: float = 0.95, deadline: float | None = None,
                       round: int = 0, history: Sequence[SynchronyClass] = (), weak_bound: int = 10,
                       with_strong_set: bool = True) -> SynchronyReport:
    """Classify a round from all-pairs reach data.

    ``reach`` is either boolean ``[sender, receiver]`` or arrival times
    compared against ``deadline``. A round that fails the strong test is
    ``WEAK`` when a strong round occurred within the last ``weak_bound``
    rounds of ``history`` (a bounded asynchronous spell), else ``ASYNC``.
    """
    threshold = check_fraction(threshold, "threshold", closed="right", low=0.0)
    honest = np.asarray(sorted(honest_set), dtype=np.int64)
    if honest.size == 0:
        raise ConfigurationError("honest_set must be non-empty")
    reach = np.asarray(reach)
    if reach.size == 0:
        return SynchronyReport(round, np.zeros(honest.size), SynchronyClass.ASYNC, [])
    if reach.dtype != bool:
        if deadline is None:
            raise ConfigurationError("arrival-time reach data needs a deadline")
        reach = reach <= deadline
    sub = reach[np.ix_(honest, honest)]
    frac = sub.mean(axis=1)
    cls = classify_round(_satisfies(sub, threshold), history, weak_bound)
    if not with_strong_set:
        strong = []
    elif cls is SynchronyClass.STRONG:
        strong = honest.tolist()
    else:
        strong = extract_strong_set(reach, honest, threshold)
    return SynchronyReport(round, frac, cls, strong)
