"""Input validation helpers shared by every module."""

import numbers

import numpy as np


class InvalidInputError(ValueError):
    """Raised when data handed to an operation violates its contract."""


class ConfigurationError(ValueError):
    """Raised when a configuration object is internally inconsistent."""


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigurationError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_power_of_two(value, name):
    value = check_positive_int(value, name)
    if value & (value - 1):
        raise ConfigurationError(f"{name} must be a power of two, got {value}")
    return value


def check_signal(samples, name="samples", min_length=1):
    """Coerce ``samples`` to a float64 array of shape (channels, time)."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2:
        raise InvalidInputError(
            f"{name} must be 1-D or (channels, time), got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise InvalidInputError(f"{name} needs at least one channel")
    if arr.shape[1] < min_length:
        raise InvalidInputError(
            f"{name} has {arr.shape[1]} samples, need at least {min_length}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains NaN or Inf")
    return arr


def check_same_shape(a, b, what="arrays"):
    if np.shape(a) != np.shape(b):
        raise InvalidInputError(
            f"{what} must have equal shapes, got {np.shape(a)} and {np.shape(b)}")
