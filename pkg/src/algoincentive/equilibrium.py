"""Deviation bounds, the reward-sharing parameter optimizer, and an
exhaustive Nash-equilibrium checker for small games.

Stakes are in Algos and costs in micro-Algos; bounds and rewards come out
in Algos.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .agents import Strategy
from .errors import ConfigurationError, DistributionError, OptimizationError
from .incentives import CostModel
from .ledger import MICRO, Role, StakeSummary

MARGIN = 1e-6
BOUND_NAMES = ("bound_L", "bound_M", "bound_K")
# reported when several bounds tie at the optimum
_BINDING_PREFERENCE = (2, 1, 0)


class BoundSet(NamedTuple):
    bound_L: float
    bound_M: float
    bound_K: float
    feasible: bool

    @property
    def max(self) -> float:
        return max(self.bound_L, self.bound_M, self.bound_K) if self.feasible else float("inf")

    def binding(self, rtol=1e-6) -> str:
        vals = (self.bound_L, self.bound_M, self.bound_K)
        top = max(vals)
        for i in _BINDING_PREFERENCE:
            if vals[i] >= top * (1 - rtol):
                return BOUND_NAMES[i]
        return BOUND_NAMES[int(np.argmax(vals))]


def _bounds_arrays(dL, dM, dK, S_L, S_M, S_K, s_l, s_m, s_k, alpha, beta):
    """Vectorised bounds; ``inf`` where the leader/committee conditions fail."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    gamma = 1.0 - alpha - beta
    den_l = (alpha / S_L - gamma / (S_K + s_l)) * s_l
    den_m = (beta / S_M - gamma / (S_K + s_m)) * s_m
    ok = (den_l > 0) & (den_m > 0) & (gamma > 0) & (alpha > 0) & (beta > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        bl = np.where(ok, dL / den_l, np.inf)
        bm = np.where(ok, dM / den_m, np.inf)
        bk = np.where(gamma > 0, dK * S_K / (s_k * gamma), np.inf)
    return bl, bm, bk, ok


def _cost_gaps(model: CostModel):
    return ((model.c_L - model.c_so) / MICRO, (model.c_M - model.c_so) / MICRO,
            (model.c_K - model.c_so) / MICRO)


def _check_stakes(S_L, S_M, S_K, s_l, s_m, s_k):
    for name, v in zip(("S_L", "S_M", "S_K", "s_l", "s_m", "s_k"), (S_L, S_M, S_K, s_l, s_m, s_k)):
        if not v > 0:
            raise ConfigurationError(f"{name} must be positive, got {v}")


def deviation_bounds(model: CostModel, S_L, S_M, S_K, s_l, s_m, s_k, alpha, beta) -> BoundSet:
    """Minimum rewards that keep leaders, committee members and strong-set
    others from defecting, at one ``(alpha, beta)``.

    When the leader or committee condition fails the point is reported
    infeasible and those two bounds are ``nan``.
    """
    _check_stakes(S_L, S_M, S_K, s_l, s_m, s_k)
    if not (alpha > 0 and beta > 0 and alpha + beta < 1):
        raise ConfigurationError("need alpha, beta > 0 and alpha + beta < 1")
    bl, bm, bk, ok = _bounds_arrays(*_cost_gaps(model), S_L, S_M, S_K, s_l, s_m, s_k, alpha, beta)
    if not bool(ok):
        return BoundSet(float("nan"), float("nan"), float(bk), False)
    return BoundSet(float(bl), float(bm), float(bk), True)


@dataclass(frozen=True)
class OptimizerResult:
    alpha: float
    beta: float
    gamma: float
    reward: float  # B_i, Algos
    binding_bound: str
    grid_resolution: float
    bounds: BoundSet
    grid_alpha: float = float("nan")
    grid_beta: float = float("nan")
    grid_reward: float = float("nan")


def parameter_grid(resolution: float):
    """All ``(alpha, beta)`` multiples of ``resolution`` with ``gamma > 0``,
    ordered by alpha then beta."""
    if not 0 < resolution <= 0.1:
        raise ConfigurationError(f"grid_resolution {resolution} outside (0, 0.1]")
    n = int(round(1.0 / resolution))
    k, j = np.meshgrid(np.arange(1, n), np.arange(1, n), indexing="ij")
    keep = (k + j) < n
    return k[keep] * resolution, j[keep] * resolution


def grid_objective(model: CostModel, summary, alpha, beta):
    """Max of the three bounds per grid point (``inf`` when infeasible)."""
    S_L, S_M, S_K, s_l, s_m, s_k = summary
    bl, bm, bk, ok = _bounds_arrays(*_cost_gaps(model), S_L, S_M, S_K, s_l, s_m, s_k, alpha, beta)
    return np.where(ok, np.maximum(np.maximum(bl, bm), bk), np.inf)


def compute_parameters(summary, model: CostModel, grid_resolution: float = 0.005,
                       refine: bool = True, iterations: int = 100) -> OptimizerResult:
    """Pick ``(alpha, beta)`` minimising the reward needed for cooperation.

    ``summary`` is ``(S_L, S_M, S_K, s_l, s_m, s_k)`` in Algos. A uniform
    grid is scanned first (ties to the smallest alpha, then beta); with
    ``refine`` the best grid point seeds a bounded coordinate descent.
    The returned reward sits a relative ``1e-6`` above the bound maximum.
    """
    summary = StakeSummary(*[float(x) for x in summary])
    _check_stakes(*summary)
    # bounds are homogeneous in cost, so optimise on unit-scale costs
    gaps = np.array(_cost_gaps(model))
    scale = gaps.max() if gaps.max() > 0 else 1.0
    a_grid, b_grid = parameter_grid(grid_resolution)

    def objective(a, b):
        S_L, S_M, S_K, s_l, s_m, s_k = summary
        bl, bm, bk, ok = _bounds_arrays(*(gaps / scale), S_L, S_M, S_K, s_l, s_m, s_k, a, b)
        return np.where(ok, np.maximum(np.maximum(bl, bm), bk), np.inf)

    vals = objective(a_grid, b_grid)
    best = int(np.argmin(vals))
    if not np.isfinite(vals[best]):
        raise OptimizationError(
            f"no feasible (alpha, beta) on a {grid_resolution} grid; leader or committee stake "
            f"is too large relative to S_K (S_L={summary.S_L:g}, S_M={summary.S_M:g}, S_K={summary.S_K:g})")
    ga, gb, gval = float(a_grid[best]), float(b_grid[best]), float(vals[best])
    a, b, val = ga, gb, gval
    if refine:
        a, b, val = _coordinate_descent(_scalar_objective(gaps / scale, summary), a, b, val, iterations)
    bounds = deviation_bounds(model, *summary, a, b)
    return OptimizerResult(
        alpha=a, beta=b, gamma=1.0 - a - b, reward=(1 + MARGIN) * bounds.max,
        binding_bound=bounds.binding(), grid_resolution=grid_resolution, bounds=bounds,
        grid_alpha=ga, grid_beta=gb, grid_reward=(1 + MARGIN) * gval * scale,
    )


def _scalar_objective(gaps, summary):
    """Pure-float max of the three bounds; a large constant where infeasible."""
    dL, dM, dK = (float(g) for g in gaps)
    S_L, S_M, S_K, s_l, s_m, s_k = summary
    big = 1e300

    def f(a, b):
        g = 1.0 - a - b
        if a <= 0 or b <= 0 or g <= 0:
            return big
        den_l = (a / S_L - g / (S_K + s_l)) * s_l
        den_m = (b / S_M - g / (S_K + s_m)) * s_m
        if den_l <= 0 or den_m <= 0:
            return big
        return max(dL / den_l, dM / den_m, dK * S_K / (s_k * g))

    return f


def _coordinate_descent(f, a, b, val, iterations, xatol=1e-12, rtol=MARGIN):
    """Alternate bounded 1-D minimisations over alpha and beta from a start point.

    Stops early once a full sweep gains less than ``rtol`` relative, the same
    size as the strict-inequality margin.
    """
    for _ in range(iterations):
        prev = val
        res = minimize_scalar(lambda x: f(x, b), bounds=(0.0, 1.0 - b), method="bounded",
                              options={"xatol": xatol})
        if res.fun < val:
            a, val = float(res.x), float(res.fun)
        res = minimize_scalar(lambda y: f(a, y), bounds=(0.0, 1.0 - a), method="bounded",
                              options={"xatol": xatol})
        if res.fun < val:
            b, val = float(res.x), float(res.fun)
        if prev - val <= rtol * abs(val):
            break
    return a, b, val


# --- small games ------------------------------------------------------------

FOUNDATION = "foundation"
ROLE_BASED = "role-based"


@dataclass
class GameInstance:
    """A one-round game over a handful of players.

    A block is produced when at least one leader cooperates, cooperating
    committee stake reaches ``committee_threshold`` of the committee's total
    stake, and every strong-set other cooperates.
    """

    roles: Sequence[int]
    stakes: Sequence[float]  # Algos
    model: CostModel = field(default_factory=CostModel)
    mechanism: str = ROLE_BASED
    reward: float = 1.0  # B_i, Algos
    alpha: float = 1 / 3
    beta: float = 1 / 3
    strong: Sequence[bool] | None = None
    committee_threshold: float = 0.5
    pay_defectors: bool = True

    def __post_init__(self):
        self.roles = np.asarray(self.roles, dtype=np.int64)
        self.stakes = np.asarray(self.stakes, dtype=float)
        if self.roles.shape != self.stakes.shape or self.roles.ndim != 1:
            raise ConfigurationError("roles and stakes must be equal-length vectors")
        if self.strong is None:
            self.strong = self.roles == Role.OTHER
        self.strong = np.asarray(self.strong, dtype=bool) & (self.roles == Role.OTHER)
        if self.mechanism not in (FOUNDATION, ROLE_BASED):
            raise ConfigurationError(f"unknown mechanism {self.mechanism!r}")
        if not (self.roles == Role.LEADER).any() or not (self.roles == Role.COMMITTEE).any():
            raise ConfigurationError("a game needs at least one leader and one committee member")

    @property
    def n_players(self) -> int:
        return int(self.roles.size)

    @property
    def gamma(self) -> float:
        return 1.0 - self.alpha - self.beta

    def stake_summary(self, s_k=None) -> StakeSummary:
        st, r = self.stakes, self.roles
        lead, comm, other = (r == Role.LEADER), (r == Role.COMMITTEE), (r == Role.OTHER)
        strong = self.strong if self.strong.any() else other
        if s_k is None:
            s_k = st[strong].min() if strong.any() else 1.0
        return StakeSummary(st[lead].sum(), st[comm].sum(), st[other].sum(),
                            st[lead].min(), st[comm].min(), float(s_k))

    def block_added(self, P: np.ndarray) -> np.ndarray:
        P = np.atleast_2d(P)
        coop = P == Strategy.COOPERATE
        lead = self.roles == Role.LEADER
        comm = self.roles == Role.COMMITTEE
        any_leader = coop[:, lead].any(axis=1)
        comm_total = self.stakes[comm].sum()
        comm_ok = coop[:, comm] @ self.stakes[comm] >= self.committee_threshold * comm_total - 1e-12
        strong_ok = coop[:, self.strong].all(axis=1)
        return any_leader & comm_ok & strong_ok

    def payoffs(self, P) -> np.ndarray:
        """Payoff (Algos) of every player for each profile row of ``P``."""
        P = np.atleast_2d(np.asarray(P, dtype=np.int64))
        st = self.stakes
        coop = P == Strategy.COOPERATE
        online = P != Strategy.OFFLINE
        block = self.block_added(P)
        eligible = coop | (online & self.pay_defectors)
        if self.mechanism == FOUNDATION:
            pay = np.where(eligible, self.reward * st / st.sum(), 0.0)
        else:
            lead_c = coop & (self.roles == Role.LEADER)
            comm_c = coop & (self.roles == Role.COMMITTEE)
            other = eligible & ~lead_c & ~comm_c
            pay = np.zeros(P.shape)
            for mask, share in ((lead_c, self.alpha), (comm_c, self.beta), (other, self.gamma)):
                tot = mask @ st
                with np.errstate(divide="ignore", invalid="ignore"):
                    rate = np.where(tot > 0, share * self.reward / tot, 0.0)
                pay += np.where(mask, rate[:, None] * st, 0.0)
        pay = np.where(block[:, None], pay, 0.0)
        coop_cost = np.array([self.model.cooperation_cost(r) for r in self.roles]) / MICRO
        cost = np.where(coop, coop_cost, self.model.c_so / MICRO)
        return pay - cost


class Deviation(NamedTuple):
    player: int
    role: Role
    to: Strategy
    gain: float


@dataclass
class NashVerdict:
    is_nash: bool
    deviations: list

    def __bool__(self):
        return self.is_nash


def verify_nash(instance: GameInstance, profile, tol: float = 1e-15) -> NashVerdict:
    """Check every unilateral deviation from ``profile``.

    A deviation counts as profitable when it raises the deviator's payoff by
    more than ``tol`` (relative to the payoff magnitude).
    """
    profile = np.asarray(profile, dtype=np.int64)
    n = instance.n_players
    rows = [profile]
    who = []
    for p in range(n):
        for s in Strategy:
            if s != profile[p]:
                q = profile.copy()
                q[p] = s
                rows.append(q)
                who.append((p, s))
    U = instance.payoffs(np.array(rows))
    base = U[0]
    devs = []
    for k, (p, s) in enumerate(who, start=1):
        gain = U[k, p] - base[p]
        if gain > tol * max(1.0, abs(base[p])):
            devs.append(Deviation(p, Role(instance.roles[p]), Strategy(s), float(gain)))
    return NashVerdict(not devs, devs)


def check_dominance(instance: GameInstance, player: int, dominated: Strategy, dominator: Strategy,
                    strict: bool = True) -> bool:
    """Does ``dominator`` beat ``dominated`` for ``player`` against every
    opponent profile? ``strict=False`` asks for weak dominance (never worse,
    better somewhere)."""
    dominated, dominator = Strategy(dominated), Strategy(dominator)
    if dominated == dominator:
        return False
    n = instance.n_players
    others = np.array(list(itertools.product(range(3), repeat=n - 1)), dtype=np.int64).reshape(-1, n - 1)
    A = np.insert(others, player, int(dominator), axis=1)
    B = np.insert(others, player, int(dominated), axis=1)
    ua = instance.payoffs(A)[:, player]
    ub = instance.payoffs(B)[:, player]
    if strict:
        return bool(np.all(ua > ub))
    return bool(np.all(ua >= ub) and np.any(ua > ub))


def defect_beats_offline(instance: GameInstance, player: int) -> bool:
    """Defecting is never worse than going offline, and strictly better in
    every opponent profile where a block forms while ``player`` defects.

    Without a block nobody is paid, so the two strategies tie there.
    """
    n = instance.n_players
    others = np.array(list(itertools.product(range(3), repeat=n - 1)), dtype=np.int64).reshape(-1, n - 1)
    D = np.insert(others, player, int(Strategy.DEFECT), axis=1)
    O = np.insert(others, player, int(Strategy.OFFLINE), axis=1)
    ud = instance.payoffs(D)[:, player]
    uo = instance.payoffs(O)[:, player]
    paid = instance.block_added(D) & (instance.stakes[player] > 0)
    return bool(np.all(ud >= uo) and np.all(ud[paid] > uo[paid]))


def all_profile(instance: GameInstance, s: Strategy) -> np.ndarray:
    return np.full(instance.n_players, int(s), dtype=np.int64)


def cooperative_profile(instance: GameInstance) -> np.ndarray:
    """Leaders, committee and strong-set others cooperate; the rest defect."""
    coop = (instance.roles != Role.OTHER) | instance.strong
    return np.where(coop, int(Strategy.COOPERATE), int(Strategy.DEFECT)).astype(np.int64)


def random_instance(rng: np.random.Generator, max_players: int = 8, mechanism=ROLE_BASED,
                    model: CostModel | None = None) -> GameInstance:
    """Random small game with at least two leaders and two committee members.

    Stakes are whole Algos in ``[1, 20]`` for leaders and committee and up
    to ``2000`` for others, which keeps the leader and committee conditions
    satisfiable.
    """
    if max_players < 5:
        raise ConfigurationError("random instances need room for 5 players")
    n_l = int(rng.integers(2, 4))
    n_m = int(rng.integers(2, 4))
    n_k = int(rng.integers(1, max_players - n_l - n_m + 1))
    roles = [Role.LEADER] * n_l + [Role.COMMITTEE] * n_m + [Role.OTHER] * n_k
    stakes = np.concatenate([rng.integers(1, 21, n_l + n_m), rng.integers(1, 2001, n_k)]).astype(float)
    strong = np.r_[np.zeros(n_l + n_m, bool), rng.random(n_k) < 0.6]
    if not strong.any():
        strong[-1] = True
    if model is None:
        c_so = int(rng.integers(1, 6))
        c_K = c_so + int(rng.integers(1, 4))
        c_M = c_K + int(rng.integers(1, 8))
        c_L = c_M + int(rng.integers(1, 8))
        model = CostModel.from_aggregates(c_L, c_M, c_K, c_so)
    return GameInstance(roles, stakes, model, mechanism, strong=strong)


# --- estimator --------------------------------------------------------------

class IncentiveCompatibleRewardSharing(TransformerMixin, BaseEstimator):
    """Role-based reward sharing with ``(alpha, beta, B_i)`` learned from a round's roles.

    ``X`` columns: stake in Algos, role code (0 leader, 1 committee,
    2 other) and optionally a strong-synchrony flag for others. ``fit``
    solves for the cheapest incentive-compatible parameters;
    ``transform`` returns each row's payment in Algos.

    ``min_stake_mode`` picks ``s*_k``: ``"floor"`` uses ``min_stake_floor``
    itself, ``"observed"`` uses the smallest strong-set other stake at or
    above the floor.
    """

    def __init__(self, c_L=16, c_M=12, c_K=6, c_so=5, grid_resolution=0.005, refine=True,
                 min_stake_mode="floor", min_stake_floor=10.0):
        self.c_L = c_L
        self.c_M = c_M
        self.c_K = c_K
        self.c_so = c_so
        self.grid_resolution = grid_resolution
        self.refine = refine
        self.min_stake_mode = min_stake_mode
        self.min_stake_floor = min_stake_floor

    def _summary(self, X):
        stake, role = X[:, 0], X[:, 1].astype(int)
        if not set(np.unique(role)) <= {0, 1, 2}:
            raise ConfigurationError("role codes must be 0, 1 or 2")
        strong = X[:, 2].astype(bool) if X.shape[1] > 2 else np.ones(len(X), bool)
        lead, comm, other = role == Role.LEADER, role == Role.COMMITTEE, role == Role.OTHER
        if not lead.any() or not comm.any() or not other.any():
            raise DistributionError("every role set must be non-empty")
        s_k = min_other_stake(stake[other & strong], self.min_stake_mode, self.min_stake_floor)
        return StakeSummary(stake[lead].sum(), stake[comm].sum(), stake[other].sum(),
                            stake[lead].min(), stake[comm].min(), s_k)

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=2)
        model = CostModel.from_aggregates(self.c_L, self.c_M, self.c_K, self.c_so)
        summary = self._summary(X)
        res = compute_parameters(summary, model, self.grid_resolution, self.refine)
        self.stake_summary_ = summary
        self.result_ = res
        self.alpha_, self.beta_, self.gamma_ = res.alpha, res.beta, res.gamma
        self.reward_ = res.reward
        self.binding_bound_ = res.binding_bound
        self.bounds_ = res.bounds
        self.rates_ = np.array([res.alpha * res.reward / summary.S_L,
                                res.beta * res.reward / summary.S_M,
                                res.gamma * res.reward / summary.S_K])
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "rates_")
        X = check_array(X, ensure_min_features=2)
        return (X[:, 0] * self.rates_[X[:, 1].astype(int)])[:, None]


def min_other_stake(stakes, mode="floor", floor=10.0) -> float:
    """``s*_k`` under the chosen convention (see the estimator docstring)."""
    if mode == "floor":
        if not floor > 0:
            raise ConfigurationError("min_stake_floor must be positive in floor mode")
        return float(floor)
    if mode == "observed":
        stakes = np.asarray(stakes, dtype=float)
        stakes = stakes[stakes >= floor]
        if stakes.size == 0:
            raise DistributionError("no strong-set other stake at or above the floor")
        return float(stakes.min())
    raise ConfigurationError(f"unknown min_stake_mode {mode!r}")
