import numpy as np
import pytest

from algoincentive.agents import Strategy
from algoincentive.config import ScenarioConfig
from algoincentive.consensus import (TIMEOUT, ConsensusParams, VoteRecord, make_verifier, play_round,
                                     reduction, tally_votes)
from algoincentive.errors import ConfigurationError
from algoincentive.gossip import DelayModel, build_topology, reach_matrix
from algoincentive.ledger import MICRO
from algoincentive.simulation import node_costs, run_scenario
from algoincentive.sortition import (SortitionParams, genesis_seed, next_seed, run_sortition,
                                     sortition_weights, verify_weights)

SORT = SortitionParams(26, 200, 400)
PREV = bytes(32)


def world(n=300, seed=0):
    stakes = np.random.default_rng(seed).integers(1, 51, n) * MICRO
    return stakes, next_seed(genesis_seed(seed), 1)


def test_empty_tally():
    assert tally_votes([], b"h", 1) == (False, 0)


def _vote(voter, w, value=b"h", step=1):
    class P:
        weight = w
    return VoteRecord(voter, 1, step, value, P)


def test_tally_exact_boundary():
    votes = [_vote(0, 2), _vote(1, 3), _vote(2, 5)]
    assert tally_votes(votes, b"h", 10) == (True, 10)


def test_tally_duplicates_counted_once():
    votes = [_vote(0, 2), _vote(0, 2), _vote(0, 2, step=2), _vote(1, 3, value=b"x")]
    assert tally_votes(votes, b"h", 5) == (False, 4)


def test_tally_tampered_votes_recount():
    p = SortitionParams(26, 2000, 4000)
    n = 2000
    stakes = np.full(n, 50 * MICRO)
    total = int(stakes.sum())
    seed = next_seed(genesis_seed(3), 1)
    rng = np.random.default_rng(0)
    votes = []
    for node in range(n):
        pr = run_sortition(node, int(stakes[node]), 1, seed, p, total)
        if pr is None:
            continue
        if rng.random() < 0.05:
            pr = pr.__class__(pr.node, pr.round, pr.step, pr.weight + int(rng.integers(1, 4)), pr.output, None)
        votes.append(VoteRecord(node, 1, 1, b"h", pr))
        if len(votes) == 1000:
            break
    assert len(votes) == 1000
    _, counted = tally_votes(votes, b"h", 1, make_verifier(seed, stakes, p, total))
    nodes = np.array([v.voter for v in votes])
    ok = verify_weights(nodes, [v.proof.weight for v in votes], [v.proof.output for v in votes],
                        stakes[nodes], 1, seed, p, total)
    oracle = sum(v.proof.weight for v, good in zip(votes, ok) if good)
    assert counted == oracle
    assert ok.sum() < 1000


def test_all_cooperate_final_first_step():
    stakes, seed = world()
    n = stakes.size
    res = play_round(1, stakes, np.zeros(n, np.int8), np.ones((n, n), bool), seed, SORT,
                     ConsensusParams(), PREV)
    out = res.outcome
    assert out.steps_used == 1 and out.block_added
    assert set(out.outcome.tolist()) == {"F"}
    assert len(out.final_hashes()) == 1 and out.agreed.prev_hash == PREV


def test_no_proposer_gives_empty_block():
    stakes, seed = world()
    n = stakes.size
    sort = SortitionParams(1e-9, 200, 400)
    res = play_round(1, stakes, np.zeros(n, np.int8), np.ones((n, n), bool), seed, sort,
                     ConsensusParams(), PREV)
    assert res.outcome.proposals == []
    assert not res.outcome.block_added and res.outcome.agreed.is_empty


def test_competing_proposals_lowest_priority_wins():
    stakes, seed = world(400, 5)
    n = stakes.size
    sort = SortitionParams(80, 200, 400)
    res = play_round(1, stakes, np.zeros(n, np.int8), np.ones((n, n), bool), seed, sort,
                     ConsensusParams(), PREV)
    props = res.outcome.proposals
    assert len(props) >= 2
    assert res.outcome.agreed == props[0]
    assert all(h == props[0].hash for h in res.outcome.node_hash)


def test_defecting_leader_emits_nothing():
    stakes, seed = world()
    n = stakes.size
    base = play_round(1, stakes, np.zeros(n, np.int8), np.ones((n, n), bool), seed, SORT,
                      ConsensusParams(), PREV)
    strat = np.zeros(n, np.int8)
    leader = base.outcome.proposals[0].proposer
    strat[leader] = Strategy.DEFECT
    res = play_round(1, stakes, strat, np.ones((n, n), bool), seed, SORT, ConsensusParams(), PREV)
    assert leader not in [b.proposer for b in res.outcome.proposals]


def test_reduction_unanimity_and_empty_fallback():
    n = 50
    reach = np.ones((n, n), bool)
    coop = np.ones(n, np.int64)
    w = {1: np.full(n, 10), 2: np.full(n, 10)}
    best = np.ones(n, np.int64)
    assert np.all(reduction(reach, best, w, coop, 100.0, 2) == 1)
    # every committee member defects: nothing reaches the threshold
    assert np.all(reduction(reach, best, w, np.zeros(n, np.int64), 100.0, 2) == 0)
    # step-2 weight network-wide below threshold forces the empty block
    w_low = {1: np.full(n, 10), 2: np.full(n, 1)}
    assert np.all(reduction(reach, best, w_low, coop, 100.0, 2) == 0)


def test_final_votes_withheld_gives_tentative():
    stakes, seed = world()
    n = stakes.size
    res = play_round(1, stakes, np.zeros(n, np.int8), np.ones((n, n), bool), seed, SORT,
                     ConsensusParams(), PREV, final_votes=False)
    assert set(res.outcome.outcome.tolist()) == {"T"}
    assert res.outcome.block_added


def test_offline_nodes_report_noblock():
    stakes, seed = world()
    n = stakes.size
    strat = np.zeros(n, np.int8)
    strat[:5] = Strategy.OFFLINE
    reach = reach_matrix(build_topology(n, 5, 1), strat == 0, DelayModel(), 20_000, strat != Strategy.OFFLINE)
    out = play_round(1, stakes, strat, reach, seed, SORT, ConsensusParams(), PREV).outcome
    assert set(out.outcome[:5].tolist()) == {"N"}


def test_chain_consistency_and_no_forks():
    rng = np.random.default_rng(2)
    for trial in range(4):
        stakes, seed = world(400, trial)
        n = stakes.size
        g = build_topology(n, 5, trial)
        prev = PREV
        s = genesis_seed(trial)
        for rnd in range(1, 8):
            s = next_seed(s, rnd)
            strat = np.where(rng.random(n) < 0.1 * trial, Strategy.DEFECT, Strategy.COOPERATE).astype(np.int8)
            reach = reach_matrix(g, strat == Strategy.COOPERATE, DelayModel(), 20_000)
            out = play_round(rnd, stakes, strat, reach, s, SORT, ConsensusParams(), prev).outcome
            assert not out.has_fork()
            if out.final_hashes():
                assert out.agreed is not None and out.agreed.prev_hash == prev
            if out.agreed is not None:
                prev = out.agreed.hash


def test_fifteen_percent_defection_census():
    cfg = ScenarioConfig(defection_rate=0.15, rounds=50, replications=100)
    rep = run_scenario(cfg)
    F = rep.matrix("final")
    lacking = np.mean(F < 0.5)
    print(f"rounds where most nodes lack Final: {lacking:.4f}; first half {F[:, :25].mean():.4f}, "
          f"second half {F[:, 25:].mean():.4f}")
    assert lacking > 0
    assert F[:, 25:].mean() <= F[:, :25].mean()
    assert not any(r.fork for r in rep.records)


def test_cost_accounting_one_charge_per_node():
    cfg = ScenarioConfig()
    m = cfg.costs
    prop = np.array([0, 1, 0, 1, 0, 2])
    comm = np.array([0, 0, 3, 2, 0, 1])
    strat = np.array([0, 0, 0, 0, 1, 1])
    c = node_costs(cfg, prop, comm, strat)
    assert c.tolist() == [m.c_K, m.c_L, m.c_M, m.c_dual, m.c_so, m.c_so]
    assert m.c_dual == m.c_fix + m.c_bl + m.c_bs + m.c_vo


def test_consensus_params_validation():
    with pytest.raises(ConfigurationError):
        ConsensusParams(vote_threshold=0.4)
    with pytest.raises(ConfigurationError):
        ConsensusParams(max_binary_steps=0)
