"""Uniform binomial and homogeneous Poisson processes on an interval."""
from __future__ import annotations

import math

import numpy as np

from .exceptions import ValidationError


def sample_uniform_binomial(n: int, horizon: float, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. Uniform(0, horizon) points, sorted.

    Ties have probability zero, so an unstable sort is fine.
    """
    if n < 0:
        raise ValidationError("order must be nonnegative")
    if horizon <= 0.0:
        raise ValidationError("horizon must be positive")
    times = rng.random(n) * horizon
    times.sort()
    return times


def order_statistic_density(n: int, k: int, s: float, horizon: float) -> float:
    """Density of the k-th smallest of n uniform points on (0, horizon):

        k C(n, k) s^(k-1) (T - s)^(n-k) T^(-n).
    """
    if not 1 <= k <= n:
        raise ValidationError(f"need 1 <= k <= n, got k={k}, n={n}")
    if horizon <= 0.0:
        raise ValidationError("horizon must be positive")
    if not 0.0 < s < horizon:
        return 0.0
    return (
        k
        * math.comb(n, k)
        * s ** (k - 1)
        * (horizon - s) ** (n - k)
        * horizon ** (-n)
    )


def sample_poisson_times(rate: float, horizon: float, rng: np.random.Generator) -> np.ndarray:
    """Arrival times of a rate-`rate` Poisson process on [0, horizon].

    Built from exponential gaps (drawn in blocks), so conditional
    uniformity given the count is a genuine property, not a construction
    artifact.
    """
    if rate <= 0.0:
        raise ValidationError("rate must be positive")
    if horizon <= 0.0:
        raise ValidationError("horizon must be positive")
    times: list[np.ndarray] = []
    last = 0.0
    block = max(16, int(1.2 * rate * horizon) + 8)
    while True:
        gaps = rng.exponential(1.0 / rate, size=block)
        arrivals = last + np.cumsum(gaps)
        if arrivals[-1] > horizon:
            times.append(arrivals[arrivals <= horizon])
            break
        times.append(arrivals)
        last = float(arrivals[-1])
    return np.concatenate(times) if times else np.empty(0)


def poisson_first_arrivals(rate: float, count: int, rng: np.random.Generator) -> np.ndarray:
    """First `count` arrival times of an unbounded rate-`rate` process."""
    if rate <= 0.0:
        raise ValidationError("rate must be positive")
    return np.cumsum(rng.exponential(1.0 / rate, size=count))
