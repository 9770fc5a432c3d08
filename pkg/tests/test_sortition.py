import numpy as np
import pytest

from algoincentive.errors import SequencingError
from algoincentive.ledger import MICRO
from algoincentive.sortition import (FINAL_STEP, PROPOSER_STEP, SortitionParams, genesis_seed, next_seed,
                                     run_sortition, select_proposers, sortition_weights, verify_proof,
                                     verify_weights)

PARAMS = SortitionParams(26, 1000, 10000)
TOTAL = 50_000_000 * MICRO


def seeds(master, k):
    s = genesis_seed(master)
    out = []
    for r in range(1, k + 1):
        s = next_seed(s, r)
        out.append(s)
    return out


def test_next_seed_pure():
    g = genesis_seed(3)
    assert next_seed(g, 1) == next_seed(g, 1)


def test_hundred_seeds_distinct():
    assert len({s.value for s in seeds(1, 100)}) == 100


def test_next_seed_sequencing():
    with pytest.raises(SequencingError):
        next_seed(genesis_seed(0), 2)


def test_refresh_changes_derivation():
    g = genesis_seed(0)
    assert next_seed(g, 1, refresh_interval=1).value != next_seed(g, 1, refresh_interval=1000).value


def test_zero_stake_never_selected():
    for s in seeds(2, 50):
        assert run_sortition(0, 0, 1, s, PARAMS, TOTAL) is None


def test_committee_weight_binomial_mean():
    # 500K nodes of 100 Algos each: total weight ~ Binomial(50M, 1000/50M)
    stakes = np.full(500_000, 100 * MICRO)
    tot = [sortition_weights(stakes, 1, s, PARAMS, TOTAL)[0].sum() for s in seeds(4, 100)]
    mean = np.mean(tot)
    assert 900 <= mean <= 1100
    assert abs(mean - 1000) <= 3 * np.sqrt(1000 / 100)


def test_proposer_weight_expected():
    stakes = np.full(500_000, 100 * MICRO)
    tot = [sortition_weights(stakes, PROPOSER_STEP, s, PARAMS, TOTAL)[0].sum() for s in seeds(5, 100)]
    assert abs(np.mean(tot) - 26) <= 3 * np.sqrt(26 / 100)


def test_proof_round_trip_and_tamper():
    stakes = np.random.default_rng(0).integers(1, 50, 400) * MICRO
    total = int(stakes.sum())
    p = SortitionParams(26, 200, 400)
    checked = 0
    for s in seeds(6, 5):
        for node, st in enumerate(stakes.tolist()):
            for step in (PROPOSER_STEP, 1, FINAL_STEP):
                pr = run_sortition(node, st, step, s, p, total)
                if pr is None:
                    continue
                checked += 1
                assert verify_proof(pr, s, st, p, total)
                assert not verify_proof(pr.__class__(pr.node, pr.round, pr.step, pr.weight + 1, pr.output,
                                                     pr.priority), s, st, p, total)
    assert checked > 50


def test_replay_under_next_seed_rejected():
    p = SortitionParams(26, 200, 400)
    stakes = np.full(1000, 50 * MICRO)
    total = int(stakes.sum())
    ss = seeds(8, 1001)
    replays = rejected = 0
    for s, nxt in zip(ss[:-1], ss[1:]):
        w, _ = sortition_weights(stakes, 1, s, p, total)
        node = int(np.flatnonzero(w)[0])
        pr = run_sortition(node, int(stakes[node]), 1, s, p, total)
        # move the proof to the next round's seed
        moved = pr.__class__(pr.node, nxt.round, pr.step, pr.weight, pr.output, pr.priority)
        replays += 1
        rejected += not verify_proof(moved, nxt, int(stakes[node]), p, total)
        if replays == 1000:
            break
    assert replays == 1000 and rejected == 1000


def test_selection_fairness_ratio():
    # node 0 holds twice node 1's stake; compare selection counts over 10^4 seeds
    rest = np.full(998, 20 * MICRO)
    stakes = np.r_[20 * MICRO, 10 * MICRO, rest]
    total = int(stakes.sum())
    p = SortitionParams(26, 200, 400)
    hits = np.zeros(2)
    for s in seeds(9, 10_000):
        w, _ = sortition_weights(stakes[:2], 1, s, p, total)
        hits += w > 0
    # per-unit rate is small, so P(selected) is nearly proportional to stake
    q = p.tau_step / (total // MICRO)
    expected = (1 - (1 - q) ** 20) / (1 - (1 - q) ** 10)
    assert abs(hits[0] / hits[1] - 2) <= 0.2
    assert abs(hits[0] / hits[1] - expected) <= 0.2


def test_selection_depends_only_on_own_inputs():
    s = seeds(10, 1)[0]
    a = np.array([5, 7, 9]) * MICRO
    b = np.array([5, 40, 1]) * MICRO
    total = 100 * MICRO
    wa, ha = sortition_weights(a, 1, s, PARAMS, total)
    wb, hb = sortition_weights(b, 1, s, PARAMS, total)
    assert wa[0] == wb[0] and ha[0] == hb[0]


def test_proposer_cap_and_order():
    p = SortitionParams(200, 200, 400, max_proposers=70)
    stakes = np.full(5000, 10 * MICRO)
    props = select_proposers(stakes, seeds(11, 1)[0], p, int(stakes.sum()))
    assert len(props) == 70
    pri = [(x.priority, x.node) for x in props]
    assert pri == sorted(pri)


def test_verify_weights_batch():
    s = seeds(12, 1)[0]
    stakes = np.full(300, 30 * MICRO)
    total = int(stakes.sum())
    p = SortitionParams(26, 200, 400)
    w, h = sortition_weights(stakes, 2, s, p, total)
    nodes = np.flatnonzero(w)
    ok = verify_weights(nodes, w[nodes], h[nodes], stakes[nodes], 2, s, p, total)
    assert ok.all()
    bad = verify_weights(nodes, w[nodes] + 1, h[nodes], stakes[nodes], 2, s, p, total)
    assert not bad.any()
