import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from algoincentive.errors import ConfigurationError, RoleAssignmentError
from algoincentive.ledger import (MICRO, Role, RoleAssignment, StakeDistributionSpec, StakeLedger,
                                  TransactionEvent, apply_transaction_round, apply_transactions,
                                  draw_transactions, generate_stakes, stake_summary)


def test_uniform_balances_in_range():
    led = generate_stakes(StakeDistributionSpec.uniform(1, 50, 1000), 7)
    algos = led.balances / MICRO
    assert led.node_count == 1000
    assert algos.min() >= 1 and algos.max() <= 50


def test_single_node_total():
    led = generate_stakes(StakeDistributionSpec.uniform(1, 50, 1), 3)
    assert led.total_stake == int(led.balances[0])


def test_normal_mean_close():
    led = generate_stakes(StakeDistributionSpec.normal(100, 10, 100_000), 1)
    mean = led.balances.mean() / MICRO
    assert abs(mean - 100) / 100 < 0.01


def test_normal_truncated_at_one():
    led = generate_stakes(StakeDistributionSpec.normal(1, 50, 10_000), 2)
    assert led.balances.min() >= MICRO


@pytest.mark.parametrize("kind,n,a,b", [("uniform", 5, 0, 1), ("uniform", 0, 5, 50),
                                        ("uniform", 10, 10, 5), ("normal", 10, 10, -1)])
def test_bad_spec_rejected(kind, n, a, b):
    with pytest.raises(ConfigurationError):
        StakeDistributionSpec(kind, n, a, b)


def test_generation_deterministic_bytes():
    spec = StakeDistributionSpec.uniform(1, 50, 500)
    assert generate_stakes(spec, 11).to_csv() == generate_stakes(spec, 11).to_csv()
    assert generate_stakes(spec, 11) != generate_stakes(spec, 12)


def test_csv_round_trip(tmp_path):
    led = generate_stakes(StakeDistributionSpec.uniform(1, 5, 20), 4)
    path = tmp_path / "ledger.csv"
    text = led.to_csv(path)
    assert text.splitlines()[0] == "node_id,stake_microalgos"
    assert StakeLedger.from_csv(str(path)) == led


def test_negative_balance_rejected():
    with pytest.raises(ConfigurationError):
        StakeLedger([5, -1])


def test_single_node_draws_all_hit():
    led = StakeLedger([10 * MICRO])
    events = draw_transactions(led, np.random.default_rng(0))
    assert len(events) == 1000 and {e.node for e in events} == {0}


def test_stake_weighted_draw_frequency():
    led = StakeLedger([90 * MICRO, 10 * MICRO])
    events = draw_transactions(led, np.random.default_rng(5), 10_000)
    share = np.mean([e.node == 0 for e in events])
    assert abs(share - 0.9) <= 0.02


def test_zero_floor_drop():
    led = StakeLedger([1 * MICRO])
    new, applied = apply_transactions(led, [TransactionEvent(0, -4)])
    assert applied == [] and new.balances[0] == MICRO


def test_deltas_nonzero_and_bounded():
    led = generate_stakes(StakeDistributionSpec.uniform(1, 50, 100), 1)
    ev = draw_transactions(led, np.random.default_rng(2))
    d = np.array([e.delta for e in ev])
    assert np.all(d != 0) and np.all(np.abs(d) <= 4)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), rounds=st.integers(1, 5), n=st.integers(1, 40))
def test_conservation_over_rounds(seed, rounds, n):
    led = generate_stakes(StakeDistributionSpec.uniform(1, 5, n), seed)
    rng = np.random.default_rng(seed)
    for _ in range(rounds):
        events = draw_transactions(led, rng)
        new, applied = apply_transactions(led, events)
        assert new.total_stake == led.total_stake + sum(e.delta for e in applied) * MICRO
        assert new.balances.min() >= 0
        led = new


def test_apply_transaction_round_empty():
    with pytest.raises(ConfigurationError):
        apply_transaction_round(StakeLedger([]), np.random.default_rng(0))


def test_selection_within_three_standard_errors():
    stakes = np.array([1, 2, 3, 4, 10]) * MICRO
    led = StakeLedger(stakes)
    n = 20_000
    ev = draw_transactions(led, np.random.default_rng(9), n)
    counts = np.bincount([e.node for e in ev], minlength=5)
    p = stakes / stakes.sum()
    se = np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(counts / n - p) <= 3 * se)


def test_stake_summary_direct():
    ra = RoleAssignment.from_mapping({0: (Role.LEADER, 3), 1: (Role.LEADER, 7), 2: (Role.COMMITTEE, 5),
                                      3: (Role.OTHER, 10), 4: (Role.OTHER, 20)})
    assert tuple(stake_summary(ra)) == (10, 5, 30, 3, 5, 10)


def test_stake_summary_all_others_rejected():
    ra = RoleAssignment.from_mapping({0: (Role.OTHER, 3), 1: (Role.OTHER, 7)})
    with pytest.raises(RoleAssignmentError):
        stake_summary(ra)


def test_stake_summary_uses_strong_subset():
    ra = RoleAssignment.from_mapping({0: (Role.LEADER, 3), 1: (Role.COMMITTEE, 5), 2: (Role.OTHER, 2),
                                      3: (Role.OTHER, 9)}, strong={3})
    s = stake_summary(ra)
    assert s.S_K == 11 and s.s_k == 9


def test_role_sums_cover_total():
    ra = RoleAssignment.from_mapping({i: (Role(i % 3), i + 1) for i in range(9)})
    s = stake_summary(ra)
    assert s.S_L + s.S_M + s.S_K == sum(range(1, 10))
