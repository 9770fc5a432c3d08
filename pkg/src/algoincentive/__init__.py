"""Algorand BA* simulation with strategic agents, reward accounting and an
incentive-compatible reward-sharing solver."""
from .agents import FixedSet, PayoffThreshold, RandomFraction, Strategy, assign_behaviors, execute_strategy
from .config import ScenarioConfig, load_config, read_config_text
from .consensus import ConsensusParams, RoundOutcome, play_round, tally_votes
from .equilibrium import (BoundSet, GameInstance, IncentiveCompatibleRewardSharing, OptimizerResult,
                          check_dominance, compute_parameters, defect_beats_offline, deviation_bounds, verify_nash)
from .gossip import DelayModel, PeerGraph, build_topology, classify_synchrony, propagate, reach_matrix
from .incentives import (CostModel, FoundationRewardSharing, RewardParameters, RewardPools,
                         RoleBasedRewardSharing, distribute_foundation, distribute_role_based,
                         role_cost, schedule_reward)
from .ledger import (Role, RoleAssignment, StakeDistributionSpec, StakeLedger, apply_transaction_round,
                     generate_stakes, stake_summary)
from .simulation import defection_sweep, reward_comparison, run_scenario, trimmed_mean
from .sortition import Seed, SortitionParams, next_seed, run_sortition, verify_proof

__version__ = "0.1.0"
