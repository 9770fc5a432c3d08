"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""
import numbers

import numpy as np

from .errors import ConfigurationError


def check_fraction(value, name, *, low=0.0, high=1.0, closed="both"):
    """Validate that ``value`` is a real number inside ``[low, high]``.

    ``closed`` selects which ends are inclusive: ``"both"``, ``"left"``,
    ``"right"`` or ``"neither"``.
    """
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise ConfigurationError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    lo_ok = value >= low if closed in ("both", "left") else value > low
    hi_ok = value <= high if closed in ("both", "right") else value < high
    if not (lo_ok and hi_ok and np.isfinite(value)):
        raise ConfigurationError(f"{name}={value} outside allowed range [{low}, {high}] ({closed})")
    return value


def check_positive_int(value, name, *, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigurationError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_nonnegative(value, name):
    if not isinstance(value, numbers.Real) or isinstance(value, bool) or value < 0 or not np.isfinite(value):
        raise ConfigurationError(f"{name} must be a non-negative real, got {value!r}")
    return value


def check_seed(seed):
    """Return ``seed`` as a Python int in the unsigned 64-bit range."""
    if isinstance(seed, bool) or not isinstance(seed, numbers.Integral):
        raise ConfigurationError(f"seed must be an integer, got {seed!r}")
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ConfigurationError(f"seed must fit in 64 unsigned bits, got {seed}")
    return seed


def check_mask(mask, n, name="mask"):
    """Coerce a boolean mask or a node predicate to a boolean array of length ``n``."""
    if mask is None:
        return np.ones(n, dtype=bool)
    if callable(mask):
        return np.fromiter((bool(mask(i)) for i in range(n)), dtype=bool, count=n)
    arr = np.asarray(mask, dtype=bool)
    if arr.shape != (n,):
        raise ConfigurationError(f"{name} must have shape ({n},), got {arr.shape}")
    return arr


def as_int_array(values, name):
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ConfigurationError(f"{name} must be one-dimensional")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ConfigurationError(f"{name} must hold integers")
    return arr.astype(np.int64)
