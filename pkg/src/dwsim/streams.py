"""Deterministic random number streams and mergeable running statistics.

Every replicate of every experiment draws from its own counter-based
stream, so results are reproducible bit for bit and independent of how
replicates are distributed over workers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Generator for replicate `index` under master `seed`.

    Splitting rule: the 128-bit Philox key is ``(seed mod 2^64) * 2^64 +
    (index mod 2^64)``. Distinct (seed, index) pairs give distinct keys,
    hence independent streams, with no coordination needed between
    workers.
    """
    key = ((int(seed) & _MASK64) << 64) | (int(index) & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class RunningMoments:
    """Mergeable (count, mean, M2, M3) accumulator.

    M2 and M3 are sums of squared / cubed deviations from the running
    mean; merging two accumulators is commutative and associative up to
    float round-off, so worker count never changes expected values.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    m3: float = 0.0

    def update(self, values) -> "RunningMoments":
        values = np.asarray(values, dtype=float).ravel()
        if values.size == 0:
            return self
        chunk = RunningMoments(
            count=values.size,
            mean=float(values.mean()),
            m2=float(((values - values.mean()) ** 2).sum()),
            m3=float(((values - values.mean()) ** 3).sum()),
        )
        return self.merge(chunk)

    def merge(self, other: "RunningMoments") -> "RunningMoments":
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean = other.count, other.mean
            self.m2, self.m3 = other.m2, other.m3
            return self
        na, nb = self.count, other.count
        n = na + nb
        delta = other.mean - self.mean
        self.m3 = (
            self.m3
            + other.m3
            + delta**3 * na * nb * (na - nb) / n**2
            + 3.0 * delta * (na * other.m2 - nb * self.m2) / n
        )
        self.m2 = self.m2 + other.m2 + delta**2 * na * nb / n
        self.mean = self.mean + delta * nb / n
        self.count = n
        return self

    @property
    def variance(self) -> float:
        if self.count < 2:
            return float("nan")
        return self.m2 / (self.count - 1)

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))

    @property
    def stderr(self) -> float:
        """Standard error of the mean."""
        if self.count < 2:
            return float("nan")
        return float(np.sqrt(self.variance / self.count))

    @property
    def third_central(self) -> float:
        if self.count < 1:
            return float("nan")
        return self.m3 / self.count
