"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from .config import ScenarioConfig, load_config
from .equilibrium import compute_parameters
from .errors import AlgoIncentiveError, ConfigurationError
from .ledger import StakeSummary, generate_stakes
from .simulation import (_round_roles_fast, _sub_seed, defection_sweep, fmt, holdings_summary,
                         rate_label, replication_seed, reward_comparison, role_holdings, run_scenario,
                         sweep_final_fraction, trimmed_mean)
from .sortition import genesis_seed, next_seed

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("algoincentive")


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _rates(text):
    try:
        vals = [float(x) / 100.0 for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rate list {text!r}")
    if not vals or any(not 0 <= v <= 1 for v in vals):
        raise argparse.ArgumentTypeError("rates are percentages in [0, 100]")
    return vals


def build_parser():
    p = argparse.ArgumentParser(prog="algoincentive",
                                description="BA* incentive simulator and reward-sharing solver")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="INI-style scenario file")
        sp.add_argument("--seed", type=_u64, default=None, help="override the master seed")

    s = sub.add_parser("simulate", help="run a scenario and dump per-round CSVs")
    common(s)
    s.add_argument("--out", required=True, help="output directory")
    s = sub.add_parser("sweep", help="defection-rate sweep")
    common(s)
    s.add_argument("--rates", type=_rates, default=_rates("0,5,10,15,20,25,30"),
                   help="comma-separated percentages, e.g. 5,10,15")
    s.add_argument("--out", default=".", help="directory for fig3_<rate>.csv")
    s = sub.add_parser("compare-rewards", help="foundation vs role-based reward series")
    common(s)
    s.add_argument("--out", default=".", help="directory for fig5/6/7 CSVs")
    s.add_argument("--floor-replications", type=int, default=None)
    s = sub.add_parser("compute-parameters", help="solve for alpha, beta and B_i")
    common(s)
    return p


def _load(args) -> tuple[ScenarioConfig, dict]:
    cfg, extra = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg, extra


def summary_from_config(cfg: ScenarioConfig, extra: dict) -> StakeSummary:
    """Use ``[parameters]`` when given, else draw round-1 roles for the configured stakes."""
    if extra:
        missing = set(StakeSummary._fields) - set(extra)
        if missing:
            raise ConfigurationError(f"[parameters] is missing {sorted(missing)}")
        return StakeSummary(*(extra[k] for k in StakeSummary._fields))
    seed = replication_seed(cfg.seed, 0)
    ledger = generate_stakes(cfg.stake_spec(), _sub_seed(seed, "stakes"))
    vrf = next_seed(genesis_seed(seed), 1, cfg.sortition.refresh_interval)
    prop, comm = _round_roles_fast(ledger.balances, vrf, cfg.sortition)
    strat = np.zeros(ledger.node_count, dtype=np.int8)
    assignment, _ = role_holdings(ledger.balances, prop, comm, strat, cfg.rewards.policy,
                                  cfg.rewards.stake_floor_w)
    return StakeSummary(*holdings_summary(assignment, cfg.rewards.min_stake_mode,
                                          cfg.rewards.min_stake_floor))


def cmd_compute_parameters(args) -> int:
    cfg, extra = _load(args)
    summary = summary_from_config(cfg, extra)
    res = compute_parameters(summary, cfg.costs, cfg.rewards.grid_resolution, cfg.rewards.refine)
    print("alpha,beta,gamma,B_i,binding_bound")
    print(",".join([fmt(res.alpha), fmt(res.beta), fmt(res.gamma), fmt(res.reward), res.binding_bound]))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg, _ = _load(args)
    report = run_scenario(cfg, args.out)
    f = report.matrix("final")
    print(f"replications={cfg.replications} rounds={cfg.rounds} nodes={cfg.node_count} "
          f"final_fraction_trimmed_mean={fmt(trimmed_mean(np.nanmean(f, axis=1), cfg.trim))}")
    if report.failed:
        for rep, msg in report.failed:
            print(f"replication {rep} aborted: {msg}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, _ = _load(args)
    os.makedirs(args.out, exist_ok=True)
    reports = defection_sweep(cfg, args.rates, args.out)
    print("defection_rate_percent,final_fraction_trimmed_mean")
    for rate, rep in reports.items():
        print(f"{rate_label(rate)},{fmt(sweep_final_fraction(rep, cfg.trim))}")
    return EXIT_RUNTIME if any(r.failed for r in reports.values()) else EXIT_OK


def cmd_compare(args) -> int:
    cfg, _ = _load(args)
    res = reward_comparison(cfg, args.out, args.floor_replications)
    s = res["fig6"]
    print("series,mean_B_i,max_B_i,cumulative_B_i")
    print(f"foundation,{fmt(float(s.foundation.mean()))},{fmt(float(s.foundation.max()))},"
          f"{fmt(float(s.foundation.sum(axis=1).mean()))}")
    print(f"role-based {s.label},{fmt(float(s.role_based.mean()))},{fmt(float(s.role_based.max()))},"
          f"{fmt(float(s.role_based.sum(axis=1).mean()))}")
    for w, fs in res["fig7"].items():
        print(f"role-based {fs.label} w={w:g},{fmt(float(fs.role_based.mean()))},"
              f"{fmt(float(fs.role_based.max()))},{fmt(float(fs.role_based.sum(axis=1).mean()))}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "compare-rewards": cmd_compare,
            "compute-parameters": cmd_compute_parameters}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AlgoIncentiveError, ArithmeticError, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    log.info("%s finished in %.2f s", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
