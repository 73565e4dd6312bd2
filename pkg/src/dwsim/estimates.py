"""Numeric result records returned by estimators and quadrature routines."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

METHODS = ("quadrature", "closed_form", "monte_carlo")


@dataclass(frozen=True)
class EstimateWithError:
    """A value with its uncertainty.

    `stderr` is the Monte Carlo standard error and is zero for
    deterministic methods, whose numerical error is reported in
    `tolerance` instead. `bias` carries a bias proxy where one is
    available (kernel density estimates report the change under a
    halved bandwidth).
    """

    value: float
    stderr: float
    reps: int
    method: str
    tolerance: float = 0.0
    bias: float = 0.0
    details: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.method != "monte_carlo" and self.stderr != 0.0:
            raise ValueError("stderr must be 0 for non Monte Carlo estimates")

    @property
    def uncertainty(self) -> float:
        """Combined uncertainty: stderr + bias proxy + quadrature tolerance."""
        return self.stderr + self.bias + self.tolerance

    def agrees_with(self, other: "EstimateWithError", nsigma: float = 3.0) -> bool:
        gap = abs(self.value - other.value)
        return gap <= nsigma * (self.uncertainty + other.uncertainty)


def mc_estimate(values, factor: float = 1.0, **details) -> EstimateWithError:
    """Sample-mean estimate (scaled by `factor`) with its standard error."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n == 0:
        raise ValueError("no samples")
    se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    return EstimateWithError(
        value=float(values.mean() * factor),
        stderr=se * abs(factor),
        reps=n,
        method="monte_carlo",
        details=dict(details),
    )


def binomial_estimate(hits: int, reps: int, **details) -> EstimateWithError:
    p = hits / reps
    se = float(np.sqrt(max(p * (1.0 - p), 1e-300) / reps))
    return EstimateWithError(
        value=p,
        stderr=se,
        reps=reps,
        method="monte_carlo",
        details={"hits": int(hits), **details},
    )
