"""Replicated scenario runs, the defection sweep and the reward comparison."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .agents import PayoffThreshold, Strategy, assign_behaviors
from .config import ScenarioConfig
from .consensus import OUTCOME_HEADER, play_round, write_outcomes_csv
from .equilibrium import compute_parameters, deviation_bounds, min_other_stake, MARGIN
from .errors import AggregationError, AlgoIncentiveError, DistributionError, OptimizationError
from .gossip import (SynchronyClass, SynchronyReport, build_topology, classify_round, classify_synchrony,
                     reach_matrix)
from .incentives import (PAY_ONLINE, PayoffRecord, RewardParameters, RewardPools, apportion,
                         distribute_role_based, payments_by_node, schedule_reward, to_micro)
from .ledger import MICRO, Role, RoleAssignment, StakeLedger, apply_transaction_round, generate_stakes
from .sortition import (FINAL_STEP, PROPOSER_STEP, genesis_seed, next_seed, select_proposers,
                        sortition_weights)

log = logging.getLogger(__name__)

GENESIS_HASH = bytes(32)


def fmt(x) -> str:
    """Floats in output files carry 9 significant digits."""
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.9g}"
    return str(x)


def replication_seed(master: int, index: int) -> int:
    digest = hashlib.sha256(int(master).to_bytes(8, "big") + int(index).to_bytes(8, "big")).digest()
    return int.from_bytes(digest[:8], "big")


def _sub_seed(seed: int, tag: str) -> int:
    return int.from_bytes(hashlib.sha256(seed.to_bytes(8, "big") + tag.encode()).digest()[:8], "big")


def trimmed_mean(samples, trim: float = 0.2) -> float:
    """Mean after dropping ``floor(trim * n)`` values from each end."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise AggregationError("trimmed_mean of an empty sample")
    if not 0 <= trim < 0.5:
        raise AggregationError("trim must be in [0, 0.5)")
    k = int(np.floor(trim * x.size))
    return float(x[k: x.size - k].mean())


# --- rewards for one round ----------------------------------------------------

def role_holdings(balances, proposer_w, committee_w, strategies, policy=PAY_ONLINE, floor_w=0.0,
                  strong=None) -> tuple[RoleAssignment, np.ndarray]:
    """Split each node's stake into role holdings (micro-Algos).

    A cooperating node selected as leader holds its won sortition weight
    (committee weight included for dual-role nodes) as ``LEADER``; a
    cooperating committee member holds its summed committee weight; the rest
    of every balance is an ``OTHER`` holding. Defecting role winners hold
    everything as ``OTHER``. Holdings of nodes with stake ``<= floor_w``,
    offline nodes, and (for ``pay-cooperators-only``) defectors are dropped.
    The strong mask marks ``OTHER`` holdings of role-free strong-set nodes.

    Returns ``(assignment, node_is_pure_other)``.
    """
    balances = np.asarray(balances, dtype=np.int64)
    strategies = np.asarray(strategies)
    algos = balances // MICRO
    coop = strategies == Strategy.COOPERATE
    online = strategies != Strategy.OFFLINE
    lead = np.where(coop & (proposer_w > 0), np.minimum(proposer_w + committee_w, algos), 0)
    comm = np.where(coop & (proposer_w == 0), np.minimum(committee_w, algos), 0)
    rest = balances - (lead + comm) * MICRO
    eligible = online & (balances > floor_w * MICRO)
    if policy != PAY_ONLINE:
        eligible &= coop
    strong = np.ones(balances.size, bool) if strong is None else np.asarray(strong, bool)
    pure = (lead == 0) & (comm == 0)
    parts = []
    for role, amount, extra in ((Role.LEADER, lead, None), (Role.COMMITTEE, comm, None),
                                (Role.OTHER, rest, pure & strong)):
        m = eligible & (amount > 0)
        idx = np.flatnonzero(m)
        st = amount[idx] * (MICRO if role != Role.OTHER else 1)
        parts.append((idx, np.full(idx.size, int(role), np.int8), st,
                      np.zeros(idx.size, bool) if extra is None else extra[idx]))
    nodes = np.concatenate([p[0] for p in parts])
    order = np.lexsort((np.concatenate([p[1] for p in parts]), nodes))
    assignment = RoleAssignment(nodes[order], np.concatenate([p[1] for p in parts])[order],
                                np.concatenate([p[2] for p in parts])[order],
                                np.concatenate([p[3] for p in parts])[order])
    return assignment, pure


def holdings_summary(assignment: RoleAssignment, mode="floor", floor=10.0):
    """Stake aggregates in Algos for the optimizer."""
    st = assignment.stakes / MICRO
    lead, comm, other = (assignment.mask(r) for r in (Role.LEADER, Role.COMMITTEE, Role.OTHER))
    if not lead.any() or not comm.any() or not other.any():
        raise DistributionError("a role set is empty after eligibility filtering")
    strong_other = other & assignment.strong
    s_k = min_other_stake(st[strong_other] if strong_other.any() else st[other], mode, floor)
    return (st[lead].sum(), st[comm].sum(), st[other].sum(), st[lead].min(), st[comm].min(), s_k)


@dataclass
class RewardOutcome:
    payments: np.ndarray  # per node, micro-Algos
    reward: int  # B_i actually drawn, micro-Algos
    eligible_share: int  # what the payments must add up to
    alpha: float = float("nan")
    beta: float = float("nan")
    binding: str = ""
    status: str = "ok"


def round_rewards(cfg: ScenarioConfig, balances, proposer_w, committee_w, strategies, strong,
                  pools: RewardPools | None = None, block_added=True) -> RewardOutcome:
    n = len(balances)
    rc = cfg.rewards
    zero = np.zeros(n, dtype=np.int64)
    if not block_added:
        return RewardOutcome(zero, 0, 0, status="no-block")
    if rc.mechanism == "foundation":
        B = to_micro(schedule_reward(rc.period))
        B = pools.draw(B) if pools is not None else B
        strategies = np.asarray(strategies)
        eligible = (strategies != Strategy.OFFLINE) & (np.asarray(balances) > rc.stake_floor_w * MICRO)
        if rc.policy != PAY_ONLINE:
            eligible &= strategies == Strategy.COOPERATE
        pay = zero.copy()
        total = int(np.sum(balances))
        pay[eligible] = apportion(B, np.asarray(balances)[eligible], total)
        share = B * int(np.sum(np.asarray(balances)[eligible])) // total if total else 0
        return RewardOutcome(pay, B, share)
    assignment, _ = role_holdings(balances, proposer_w, committee_w, strategies, rc.policy,
                                  rc.stake_floor_w, strong)
    try:
        summary = holdings_summary(assignment, rc.min_stake_mode, rc.min_stake_floor)
        if rc.alpha is None:
            res = compute_parameters(summary, cfg.costs, rc.grid_resolution, rc.refine)
            alpha, beta, reward, binding = res.alpha, res.beta, res.reward, res.binding_bound
        else:
            bounds = deviation_bounds(cfg.costs, *summary, rc.alpha, rc.beta)
            if not bounds.feasible:
                raise OptimizationError("fixed (alpha, beta) infeasible for this round")
            alpha, beta, reward, binding = rc.alpha, rc.beta, (1 + MARGIN) * bounds.max, bounds.binding()
    except (DistributionError, OptimizationError) as exc:
        log.info("round rewards skipped: %s", exc)
        return RewardOutcome(zero, 0, 0, status="infeasible")
    B = to_micro(reward)
    B = pools.draw(B) if pools is not None else B
    params = RewardParameters(alpha, beta, reward=reward)
    pay = distribute_role_based(params, assignment, B)
    return RewardOutcome(payments_by_node(assignment, pay, n), B, B, alpha, beta, binding)


def node_costs(cfg: ScenarioConfig, proposer_w, committee_w, strategies):
    m = cfg.costs
    coop = np.asarray(strategies) == Strategy.COOPERATE
    lead, comm = proposer_w > 0, committee_w > 0
    c = np.where(lead & comm, m.c_dual, np.where(lead, m.c_L, np.where(comm, m.c_M, m.c_K)))
    return np.where(coop, c, m.c_so).astype(np.int64)


# --- scenario runs --------------------------------------------------------------

@dataclass
class RoundRecord:
    replication: int
    round: int
    final: float
    tentative: float
    no_block: float
    steps_used: int
    block_added: bool
    synchrony: str
    reward: int
    paid: int
    eligible_share: int
    defector_stake_share: float
    alpha: float = float("nan")
    beta: float = float("nan")
    binding: str = ""
    reward_status: str = "ok"
    fork: bool = False


SUMMARY_HEADER = ["replication", "round", "final_fraction", "tentative_fraction", "noblock_fraction",
                  "steps_used", "block_added", "synchrony", "reward_microalgos", "paid_microalgos",
                  "eligible_share_microalgos", "defector_stake_share", "alpha", "beta",
                  "binding_bound", "reward_status"]


@dataclass
class RunReport:
    config: ScenarioConfig
    records: list = field(default_factory=list)
    failed: list = field(default_factory=list)  # (replication, message)

    def matrix(self, attr: str) -> np.ndarray:
        """``(replications, rounds)`` array of one record field."""
        reps = sorted({r.replication for r in self.records})
        rounds = sorted({r.round for r in self.records})
        out = np.full((len(reps), len(rounds)), np.nan)
        ri = {v: i for i, v in enumerate(reps)}
        ci = {v: i for i, v in enumerate(rounds)}
        for r in self.records:
            out[ri[r.replication], ci[r.round]] = float(getattr(r, attr))
        return out

    def summary_rows(self):
        for r in self.records:
            yield [r.replication, r.round, fmt(r.final), fmt(r.tentative), fmt(r.no_block), r.steps_used,
                   int(r.block_added), r.synchrony, r.reward, r.paid, r.eligible_share,
                   fmt(r.defector_stake_share), fmt(r.alpha), fmt(r.beta), r.binding, r.reward_status]

    def write_summary(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_HEADER)
            w.writerows(self.summary_rows())


class _Dumps:
    """Per-node CSV writers for the detailed replication."""

    def __init__(self, out_dir):
        self.files = {}
        self.writers = {}
        headers = {
            "outcomes": OUTCOME_HEADER,
            "payments": ["round", "node_id", "role", "strategy", "reward_microalgos", "cost_microalgos",
                         "payoff_microalgos"],
            "behaviors": ["round", "node_id", "strategy"],
            "reachability": ["round", "sender", "reached_fraction"],
        }
        for name, header in headers.items():
            fh = open(os.path.join(out_dir, f"{name}.csv"), "w", newline="")
            self.files[name] = fh
            self.writers[name] = csv.writer(fh, lineterminator="\n")
            self.writers[name].writerow(header)

    def close(self):
        for fh in self.files.values():
            fh.close()


def _payment_rows(round, proposer_w, committee_w, strategies, pay, cost):
    roles = np.where(proposer_w > 0, Role.LEADER, np.where(committee_w > 0, Role.COMMITTEE, Role.OTHER))
    for node in range(len(pay)):
        rec = PayoffRecord(node, round, int(pay[node]), int(cost[node]), int(pay[node] - cost[node]),
                           Role(int(roles[node])), Strategy(int(strategies[node])))
        yield [rec.round, rec.node, rec.role.name.lower(), rec.strategy.letter, rec.reward, rec.cost, rec.payoff]


def run_replication(cfg: ScenarioConfig, index: int, out_dir=None):
    seed = replication_seed(cfg.seed, index)
    ledger = generate_stakes(cfg.stake_spec(), _sub_seed(seed, "stakes"))
    n = ledger.node_count
    graph = build_topology(n, cfg.out_degree, _sub_seed(seed, "topology"), cfg.min_in_degree)
    txn_rng = np.random.default_rng(_sub_seed(seed, "transactions"))
    behavior_seed = _sub_seed(cfg.seed, f"behavior/{index}")
    vrf_seed = genesis_seed(seed)
    pools = RewardPools(fees_per_round=cfg.rewards.fees_per_round)
    dumps = _Dumps(out_dir) if out_dir is not None else None
    if dumps is not None:
        ledger.to_csv(os.path.join(out_dir, "ledger.csv"))
    prev_hash = GENESIS_HASH
    history: list = []
    reach_cache: dict = {}
    policy = cfg.policy(behavior_seed)
    records = []
    try:
        for rnd in range(1, cfg.rounds + 1):
            vrf_seed = next_seed(vrf_seed, rnd, cfg.sortition.refresh_interval)
            profile = assign_behaviors(policy, ledger, rnd)
            strat = profile.strategies
            coop = strat == Strategy.COOPERATE
            online = strat != Strategy.OFFLINE
            key = strat.tobytes()
            if key not in reach_cache:
                reach = reach_matrix(graph, coop, cfg.delay, cfg.consensus.step_deadline, online,
                                     np.random.default_rng(_sub_seed(seed, "delays")))
                reach_cache = {key: (reach, {})}
            reach, sync_cache = reach_cache[key]
            honest = np.flatnonzero(online)
            if "base" not in sync_cache:
                base = classify_synchrony(reach, honest, cfg.synchrony_threshold)
                mask = np.zeros(n, bool)
                mask[np.asarray(base.strong_set, dtype=np.int64)] = True
                sync_cache["base"], sync_cache["strong"] = base, mask
            base = sync_cache["base"]
            cls = classify_round(base.classification is SynchronyClass.STRONG, history, cfg.weak_bound)
            sync = SynchronyReport(rnd, base.reached_fraction, cls, base.strong_set)
            history.append(sync.classification)
            result = play_round(rnd, ledger.balances, strat, reach, vrf_seed, cfg.sortition, cfg.consensus,
                                prev_hash)
            out = result.outcome
            if out.agreed is not None:
                prev_hash = out.agreed.hash
            rew = round_rewards(cfg, ledger.balances, result.proposer_weights, result.committee_weights,
                                strat, sync_cache["strong"], pools, out.block_added)
            pools.collect_fees()
            cost = node_costs(cfg, result.proposer_weights, result.committee_weights, strat)
            paid = int(rew.payments.sum())
            defect_share = float(ledger.balances[~coop].sum() / max(ledger.total_stake, 1))
            f, t, nb = out.fractions()
            records.append(RoundRecord(index, rnd, f, t, nb, out.steps_used, out.block_added,
                                       sync.classification.value, rew.reward, paid, rew.eligible_share,
                                       defect_share, rew.alpha, rew.beta, rew.binding, rew.status,
                                       out.has_fork()))
            if dumps is not None:
                write_outcomes_csv(dumps.files["outcomes"], [out])
                dumps.writers["payments"].writerows(
                    _payment_rows(rnd, result.proposer_weights, result.committee_weights, strat,
                                  rew.payments, cost))
                dumps.writers["behaviors"].writerows(
                    [rnd, i, Strategy(int(s)).letter] for i, s in enumerate(strat.tolist()))
                dumps.writers["reachability"].writerows(
                    [rnd, int(o), fmt(float(v))] for o, v in zip(honest, sync.reached_fraction))
            if isinstance(policy, PayoffThreshold):
                policy = _update_threshold_policy(policy, ledger, rew, result)
            ledger = ledger.credit(rew.payments)
            if cfg.transactions_per_round:
                ledger = apply_transaction_round(ledger, txn_rng, cfg.transactions_per_round)
    finally:
        if dumps is not None:
            dumps.close()
    return records


def _update_threshold_policy(policy: PayoffThreshold, ledger: StakeLedger, rew: RewardOutcome, result):
    stake = ledger.balances / MICRO
    lead, comm = result.proposer_weights > 0, (result.committee_weights > 0) & (result.proposer_weights == 0)
    other = ~lead & ~comm
    rates = {}
    for name, m in (("leader", lead), ("committee", comm), ("other", other)):
        tot = stake[m].sum()
        rates[name] = float(rew.payments[m].sum() / MICRO / tot) if tot > 0 else 0.0
    return PayoffThreshold(policy.cost_model, rates, policy.pay_defectors)


def run_scenario(cfg: ScenarioConfig, out_dir=None) -> RunReport:
    """All replications of a scenario; per-node dumps for replication 0 when ``out_dir`` is set."""
    report = RunReport(cfg)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    for rep in range(cfg.replications):
        detail = out_dir if (out_dir is not None and rep == 0 and cfg.detail_replications > 0) else None
        try:
            report.records.extend(run_replication(cfg, rep, detail))
        except AlgoIncentiveError as exc:
            log.warning("replication %d aborted: %s", rep, exc)
            report.failed.append((rep, str(exc)))
    if out_dir is not None:
        report.write_summary(os.path.join(out_dir, "summary.csv"))
    return report


def rate_label(rate: float) -> str:
    return f"{rate * 100:g}"


def defection_sweep(base: ScenarioConfig, rates, out_dir=None) -> dict:
    """One run per defection rate with the same master seed."""
    reports = {}
    for rate in rates:
        if not 0 <= rate <= 1:
            raise ValueError(f"defection rate {rate} outside [0, 1]")
        cfg = base.replace(defection_rate=float(rate), behavior="random")
        rep = run_scenario(cfg)
        reports[rate] = rep
        if out_dir is not None:
            write_fig3(rep, os.path.join(out_dir, f"fig3_{rate_label(rate)}.csv"), base.trim)
    return reports


FIG3_HEADER = ["round", "final_trimmed_mean", "tentative_trimmed_mean", "noblock_trimmed_mean",
               "final_mean", "tentative_mean", "noblock_mean"]


def write_fig3(report: RunReport, path, trim=0.2):
    mats = [report.matrix(a) for a in ("final", "tentative", "no_block")]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIG3_HEADER)
        for j in range(mats[0].shape[1]):
            tm = [trimmed_mean(m[:, j], trim) for m in mats]
            mean = [float(np.mean(m[:, j])) for m in mats]
            w.writerow([j + 1] + [fmt(x) for x in tm + mean])


def sweep_final_fraction(report: RunReport, trim=0.2) -> float:
    """Trimmed mean over replications of each replication's mean Final fraction."""
    return trimmed_mean(np.nanmean(report.matrix("final"), axis=1), trim)


# --- reward comparison (reward-only fast path) ---------------------------------

@dataclass
class RewardSeries:
    label: str
    role_based: np.ndarray  # (replications, rounds) B_i in Algos
    foundation: np.ndarray
    paid_ok: bool  # payments added up exactly every round
    status: list = field(default_factory=list)


def _round_roles_fast(balances, seed, sortition):
    """Sortition for the roles of a round that completes in one binary step."""
    total = int(balances.sum())
    prop = np.zeros(balances.size, dtype=np.int64)
    for p in select_proposers(balances, seed, sortition, total):
        prop[p.node] = p.weight
    comm = np.zeros(balances.size, dtype=np.int64)
    for step in (1, 2, 3, FINAL_STEP):
        comm += sortition_weights(balances, step, seed, sortition, total)[0]
    return prop, comm


def reward_series(cfg: ScenarioConfig, dist: str, floors=(None,), mode=None, replications=None):
    """Per-round role-based and foundation B_i under all-cooperate, strong synchrony.

    The consensus engine is skipped: with everyone cooperating and the
    network strongly synchronous every round adds a block after one binary
    step, so only the sortition draws determine the role sets. ``floors``
    evaluates several U^w thresholds on the same draws.
    """
    reps = cfg.replications if replications is None else replications
    spec = cfg.stake_spec(dist)
    out = {w: np.zeros((reps, cfg.rounds)) for w in floors}
    paid_ok = {w: True for w in floors}
    status = {w: [] for w in floors}
    fnd = np.full((reps, cfg.rounds), schedule_reward(cfg.rewards.period))
    rc = cfg.rewards
    subs = {}
    for w in floors:
        kw = dict(mechanism="role-based", min_stake_mode=mode or rc.min_stake_mode)
        if w is not None:
            # U^w: stakes <= w leave the reward base and the s*_k candidates
            kw["stake_floor_w"] = w
            if kw["min_stake_mode"] == "observed":
                kw["min_stake_floor"] = w
        subs[w] = cfg.replace(rewards=dataclasses.replace(rc, **kw))
    for rep in range(reps):
        seed = replication_seed(cfg.seed, rep)
        ledger = generate_stakes(spec, _sub_seed(seed, "stakes"))
        strat = np.zeros(ledger.node_count, dtype=np.int8)
        vrf = genesis_seed(seed)
        for rnd in range(1, cfg.rounds + 1):
            vrf = next_seed(vrf, rnd, cfg.sortition.refresh_interval)
            prop, comm = _round_roles_fast(ledger.balances, vrf, cfg.sortition)
            if not prop.any():
                # no proposer means no block, hence no reward
                for w in floors:
                    status[w].append("no-block")
                continue
            for w, sub in subs.items():
                rew = round_rewards(sub, ledger.balances, prop, comm, strat, None)
                out[w][rep, rnd - 1] = rew.reward / MICRO
                paid_ok[w] &= int(rew.payments.sum()) == rew.eligible_share
                status[w].append(rew.status)
    return {w: RewardSeries(dist, out[w], fnd, paid_ok[w], status[w]) for w in floors}


def dist_label(dist: str) -> str:
    return dist.replace("(", "").replace(")", "").replace(",", "-").replace(" ", "")


def reward_comparison(cfg: ScenarioConfig, out_dir=None, floor_replications=None):
    """Reward series for the fig5/fig6/fig7 outputs. Returns ``{"fig5": {dist: series}, "fig6": series, "fig7": {w: series}}``."""
    results = {"fig5": {}, "fig7": {}}
    for dist in cfg.distributions:
        results["fig5"][dist] = reward_series(cfg, dist)[None]
    results["fig6"] = results["fig5"][cfg.distributions[0]]
    results["fig7"] = reward_series(cfg, cfg.floor_distribution, floors=tuple(cfg.floors), mode="observed",
                                    replications=floor_replications)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for dist, s in results["fig5"].items():
            _write_series(os.path.join(out_dir, f"fig5_{dist_label(dist)}.csv"), s, cfg.trim)
        _write_fig6(os.path.join(out_dir, "fig6.csv"), results["fig6"], cfg.trim)
        with open(os.path.join(out_dir, "fig7.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["w", "round", "role_based_B_trimmed_mean", "role_based_B_mean"])
            for wv, s in results["fig7"].items():
                for j in range(s.role_based.shape[1]):
                    col = s.role_based[:, j]
                    w.writerow([fmt(float(wv)), j + 1, fmt(trimmed_mean(col, cfg.trim)), fmt(float(col.mean()))])
    return results


def _write_series(path, s: RewardSeries, trim):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "role_based_B_trimmed_mean", "role_based_B_mean", "role_based_B_max"])
        for j in range(s.role_based.shape[1]):
            col = s.role_based[:, j]
            w.writerow([j + 1, fmt(trimmed_mean(col, trim)), fmt(float(col.mean())), fmt(float(col.max()))])


def _write_fig6(path, s: RewardSeries, trim):
    rb = s.role_based.mean(axis=0)
    fd = s.foundation.mean(axis=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "foundation_B", "role_based_B", "foundation_cumulative", "role_based_cumulative"])
        for j in range(rb.size):
            w.writerow([j + 1, fmt(float(fd[j])), fmt(float(rb[j])), fmt(float(fd[: j + 1].sum())),
                        fmt(float(rb[: j + 1].sum()))])
