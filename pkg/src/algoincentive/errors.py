"""Exception hierarchy shared by every module of the package."""


class AlgoIncentiveError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(AlgoIncentiveError, ValueError):
    """Invalid configuration or specification value."""


class SequencingError(AlgoIncentiveError):
    """A seed or round was derived out of order."""


class RoleAssignmentError(AlgoIncentiveError, ValueError):
    """A role assignment violates its preconditions (e.g. no leaders)."""


class ScheduleError(AlgoIncentiveError, ValueError):
    """Reward period outside the published schedule."""


class DistributionError(AlgoIncentiveError, ValueError):
    """Rewards cannot be distributed over the given role sets."""


class OptimizationError(AlgoIncentiveError):
    """No feasible reward-sharing parameters exist."""


class AggregationError(AlgoIncentiveError, ValueError):
    """Summary statistics requested over invalid samples."""
