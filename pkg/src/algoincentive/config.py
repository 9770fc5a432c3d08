"""Scenario configuration and the INI-style config file loader.

Files use ``key = value`` lines, ``#`` comments and ``[section]`` headers.
Every key is optional; omitted keys take the defaults below.
"""
from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field

from ._validation import check_fraction, check_positive_int, check_seed
from .agents import FixedSet, PayoffThreshold, RandomFraction
from .consensus import ConsensusParams
from .errors import ConfigurationError
from .gossip import DEFAULT_STEP_DEADLINE_MS, DelayModel
from .incentives import PAY_COOPERATORS, PAY_ONLINE, CostModel
from .ledger import StakeDistributionSpec
from .sortition import SortitionParams

_DIST = re.compile(r"^\s*([UN])\(\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*\)\s*$")


def parse_distribution(text: str, node_count: int) -> StakeDistributionSpec:
    """``U(lo,hi)`` or ``N(mean,std)``."""
    m = _DIST.match(text)
    if not m:
        raise ConfigurationError(f"cannot parse stake distribution {text!r}; use U(lo,hi) or N(mean,std)")
    kind, a, b = m.group(1), float(m.group(2)), float(m.group(3))
    if kind == "U":
        return StakeDistributionSpec.uniform(a, b, node_count)
    return StakeDistributionSpec.normal(a, b, node_count)


def distribution_mean(text: str) -> float:
    spec = parse_distribution(text, 1)
    return (spec.a + spec.b) / 2 if spec.kind == "uniform" else spec.a


@dataclass
class RewardConfig:
    mechanism: str = "foundation"  # or "role-based"
    period: int = 1
    alpha: float | None = None  # fixed split; both None means solve each round
    beta: float | None = None
    policy: str = PAY_ONLINE
    min_stake_mode: str = "floor"
    min_stake_floor: float = 10.0
    stake_floor_w: float = 0.0  # U^w: nodes with stake <= w earn nothing
    grid_resolution: float = 0.005
    refine: bool = True
    fees_per_round: int = 0

    def __post_init__(self):
        if self.mechanism not in ("foundation", "role-based"):
            raise ConfigurationError(f"unknown mechanism {self.mechanism!r}")
        if self.policy not in (PAY_ONLINE, PAY_COOPERATORS):
            raise ConfigurationError(f"unknown payment policy {self.policy!r}")
        if (self.alpha is None) != (self.beta is None):
            raise ConfigurationError("set both alpha and beta, or neither")
        if self.min_stake_mode not in ("floor", "observed"):
            raise ConfigurationError(f"unknown min_stake_mode {self.min_stake_mode!r}")
        if self.stake_floor_w < 0:
            raise ConfigurationError("stake_floor_w must be non-negative")


@dataclass
class ScenarioConfig:
    node_count: int = 1000
    stakes: str = "U(1,50)"
    out_degree: int = 5
    min_in_degree: int = 1
    delay: DelayModel = field(default_factory=DelayModel)
    consensus: ConsensusParams = field(default_factory=ConsensusParams)
    sortition: SortitionParams = field(default_factory=lambda: SortitionParams(26, 200, 400))
    costs: CostModel = field(default_factory=CostModel)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    behavior: str = "random"  # random | fixed | threshold
    defection_rate: float = 0.0
    defectors: tuple = ()
    offline: tuple = ()
    rounds: int = 30
    replications: int = 100
    seed: int = 7
    synchrony_threshold: float = 0.95
    weak_bound: int = 10
    honest_threshold_h: float = 2 / 3  # reported only
    transactions_per_round: int = 1000
    detail_replications: int = 1  # per-node CSV dumps for the first k replications
    # reward comparison
    distributions: tuple = ("N(100,10)",)
    total_stake_algos: float | None = None
    floors: tuple = (3.0, 5.0, 7.0)
    floor_distribution: str = "U(1,200)"
    trim: float = 0.2

    def __post_init__(self):
        check_positive_int(self.node_count, "node_count")
        check_positive_int(self.rounds, "rounds")
        check_positive_int(self.replications, "replications")
        check_seed(self.seed)
        check_fraction(self.defection_rate, "defection_rate")
        if self.behavior not in ("random", "fixed", "threshold"):
            raise ConfigurationError(f"unknown behavior policy {self.behavior!r}")
        if not 0 <= self.trim < 0.5:
            raise ConfigurationError("trim must be in [0, 0.5)")
        parse_distribution(self.stakes, self.node_count)
        for d in self.distributions:
            parse_distribution(d, 1)

    def stake_spec(self, text: str | None = None) -> StakeDistributionSpec:
        text = self.stakes if text is None else text
        n = self.node_count
        if self.total_stake_algos:
            n = max(1, int(round(self.total_stake_algos / distribution_mean(text))))
        return parse_distribution(text, n)

    def policy(self, seed: int):
        if self.behavior == "fixed":
            return FixedSet(self.defectors, self.offline)
        if self.behavior == "threshold":
            return PayoffThreshold(self.costs, {}, self.rewards.policy == PAY_ONLINE)
        return RandomFraction(self.defection_rate, seed)

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)


_INT = int
_FLOAT = float


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    return tuple(float(x) for x in re.split(r"[,\s]+", text.strip()) if x)


def _ints(text):
    return tuple(int(x) for x in re.split(r"[,\s]+", text.strip()) if x)


def _dists(text):
    return tuple(x.strip() for x in text.split(";") if x.strip())


# section -> key -> (target, parser); targets are ScenarioConfig fields or "obj.field"
_SCHEMA = {
    "scenario": {
        "node_count": ("node_count", _INT), "rounds": ("rounds", _INT),
        "replications": ("replications", _INT), "seed": ("seed", _INT),
        "honest_threshold_h": ("honest_threshold_h", _FLOAT),
        "transactions_per_round": ("transactions_per_round", _INT),
        "detail_replications": ("detail_replications", _INT), "trim": ("trim", _FLOAT),
    },
    "stakes": {
        "distribution": ("stakes", str), "total_stake_algos": ("total_stake_algos", _FLOAT),
    },
    "network": {
        "out_degree": ("out_degree", _INT), "min_in_degree": ("min_in_degree", _INT),
        "delay_kind": ("delay.kind", str), "delay_lo_ms": ("delay.lo", _FLOAT),
        "delay_hi_ms": ("delay.hi", _FLOAT), "step_deadline_ms": ("consensus.step_deadline", _FLOAT),
        "synchrony_threshold": ("synchrony_threshold", _FLOAT), "weak_bound": ("weak_bound", _INT),
    },
    "sortition": {
        "tau_proposer": ("sortition.tau_proposer", _FLOAT), "tau_step": ("sortition.tau_step", _FLOAT),
        "tau_final": ("sortition.tau_final", _FLOAT),
        "refresh_interval": ("sortition.refresh_interval", _INT),
        "max_proposers": ("sortition.max_proposers", _INT),
    },
    "consensus": {
        "vote_threshold": ("consensus.vote_threshold", _FLOAT),
        "final_threshold": ("consensus.final_threshold", _FLOAT),
        "max_binary_steps": ("consensus.max_binary_steps", _INT),
    },
    "costs": {k: (f"costs.{k}", _INT) for k in
              ("c_ve", "c_se", "c_so", "c_go", "c_vs", "c_vc", "c_bl", "c_bs", "c_vo")}
    | {k: (f"aggregate.{k}", _INT) for k in ("c_L", "c_M", "c_K")},
    "rewards": {
        "mechanism": ("rewards.mechanism", str), "period": ("rewards.period", _INT),
        "alpha": ("rewards.alpha", _FLOAT), "beta": ("rewards.beta", _FLOAT),
        "policy": ("rewards.policy", str), "min_stake_mode": ("rewards.min_stake_mode", str),
        "min_stake_floor": ("rewards.min_stake_floor", _FLOAT),
        "stake_floor_w": ("rewards.stake_floor_w", _FLOAT),
        "grid_resolution": ("rewards.grid_resolution", _FLOAT), "refine": ("rewards.refine", _bool),
        "fees_per_round": ("rewards.fees_per_round", _INT),
    },
    "behavior": {
        "policy": ("behavior", str), "defection_rate": ("defection_rate", _FLOAT),
        "defectors": ("defectors", _ints), "offline": ("offline", _ints),
    },
    "compare": {
        "distributions": ("distributions", _dists), "floors": ("floors", _floats),
        "floor_distribution": ("floor_distribution", str),
    },
    # stake aggregates for compute-parameters
    "parameters": {k: (f"summary.{k}", _FLOAT) for k in ("S_L", "S_M", "S_K", "s_l", "s_m", "s_k")},
}


def read_config_text(text: str):
    """Parse config text into ``(ScenarioConfig, extras)``.

    ``extras`` holds the ``[parameters]`` stake aggregates when present.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",),
                                       interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc
    top: dict = {}
    nested: dict = {}
    for section in parser.sections():
        schema = _SCHEMA.get(section)
        if schema is None:
            raise ConfigurationError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in schema:
                raise ConfigurationError(f"unknown key {key!r} in [{section}]")
            target, conv = schema[key]
            try:
                value = conv(raw)
            except ValueError as exc:
                raise ConfigurationError(f"[{section}] {key}: {exc}") from exc
            if "." in target:
                obj, attr = target.split(".", 1)
                nested.setdefault(obj, {})[attr] = value
            else:
                top[target] = value
    try:
        base = ScenarioConfig()
        if "delay" in nested:
            d = nested["delay"]
            kind = d.get("kind", base.delay.kind)
            lo = d.get("lo", base.delay.lo)
            top["delay"] = DelayModel(kind, lo, d.get("hi", lo if kind == "constant" else base.delay.hi))
        if "consensus" in nested:
            top["consensus"] = dataclasses.replace(base.consensus, **nested["consensus"])
        if "sortition" in nested:
            top["sortition"] = dataclasses.replace(base.sortition, **nested["sortition"])
        if "aggregate" in nested:
            a = nested["aggregate"]
            missing = {"c_L", "c_M", "c_K"} - set(a)
            if missing or "costs" in nested and set(nested["costs"]) - {"c_so"}:
                raise ConfigurationError("give c_L, c_M, c_K (plus c_so) or component costs, not a mix")
            c_so = nested.get("costs", {}).get("c_so", base.costs.c_so)
            top["costs"] = CostModel.from_aggregates(a["c_L"], a["c_M"], a["c_K"], c_so)
        elif "costs" in nested:
            top["costs"] = CostModel(**nested["costs"])
        if "rewards" in nested:
            top["rewards"] = RewardConfig(**nested["rewards"])
        cfg = ScenarioConfig(**top)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc
    return cfg, nested.get("summary", {})


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return read_config_text(text)
