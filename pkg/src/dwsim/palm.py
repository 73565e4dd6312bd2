"""Hitting probabilities, Campbell-weighted Palm estimation and the
local-conditioning experiments.

All experiments replicate independent fields with one counter-based
stream per replicate (see streams.stream), score each realization
read-only, and merge chunk results in fixed order, so any worker count
reproduces the single-worker numbers.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from dataclasses import dataclass, field

import numpy as np

from .estimates import EstimateWithError, binomial_estimate
from .exceptions import BudgetError, ConfigurationError, ValidationError
from .kernels import DiscreteMeasure, as_point, as_point_tuple, diagonal_distance
from .particles import ParticleField, _conditioned_cluster, simulate_field
from .stats import (
    effective_sample_size,
    ks_distance_weighted,
    ks_error_bar,
    spearman,
)
from .streams import stream

DEFAULT_EPS_LADDER = (0.2, 0.1, 0.05)


@dataclass(frozen=True)
class HittingRequest:
    """Joint hitting experiment configuration: do all the eps-balls around
    `centers` carry positive mass at time t?"""

    mu: DiscreteMeasure
    t: float
    centers: np.ndarray
    eps: float
    reps: int
    resolution: int = 10_000

    def __post_init__(self):
        centers = as_point_tuple(self.centers, self.mu.d)
        object.__setattr__(self, "centers", centers)
        if self.t <= 0.0:
            raise ValidationError("time must be positive")
        if self.eps <= 0.0:
            raise ValidationError("eps must be positive")
        if self.reps < 1:
            raise ValidationError("need at least one replicate")
        if centers.shape[0] > 1:
            min_gap = diagonal_distance(centers) * np.sqrt(2.0)
            if self.eps >= 0.5 * min_gap:
                raise ValidationError("eps must be below half the center separation")

    @property
    def n(self) -> int:
        return self.centers.shape[0]


def _ball_counts(positions: np.ndarray, centers: np.ndarray, eps_sq: np.ndarray) -> np.ndarray:
    """Particle counts in each (center, eps) ball: shape (n_centers, n_eps)."""
    if positions.shape[0] == 0:
        return np.zeros((centers.shape[0], eps_sq.size), dtype=np.int64)
    d2 = np.sum((positions[None, :, :] - centers[:, None, :]) ** 2, axis=2)
    return np.sum(d2[:, :, None] < eps_sq[None, None, :], axis=1)


def _map_chunks(worker, reps: int, seed: int, chunk: int, workers: int):
    """Run `worker(seed, lo, hi)` over fixed chunk boundaries, merged in
    chunk order regardless of worker count."""
    bounds = [(lo, min(lo + chunk, reps)) for lo in range(0, reps, chunk)]
    if workers <= 1:
        return [worker(seed, lo, hi) for lo, hi in bounds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(worker, seed, lo, hi) for lo, hi in bounds]
        return [f.result() for f in futures]


def _boost_predicate(snapshot: ParticleField, centers: np.ndarray, radius: float) -> bool:
    if snapshot.count == 0:
        return False
    d2 = np.sum((snapshot.positions[None, :, :] - centers[:, None, :]) ** 2, axis=2)
    return bool((d2 < radius**2).any())


def _hit_chunk(args, seed, lo, hi):
    mu, t, N, centers, eps_list, boost = args
    eps_sq = np.asarray(eps_list, dtype=float) ** 2
    n = centers.shape[0]
    joint = np.zeros(eps_sq.size, dtype=np.int64)
    singles = np.zeros((n, eps_sq.size), dtype=np.int64)
    kept = 0
    radius = 3.0 * math.sqrt(t)
    for rep in range(lo, hi):
        rng = stream(seed, rep)
        if boost:
            fld = simulate_field(mu, t, N, rng, checkpoints=(t / 2.0,))
            if not _boost_predicate(fld.snapshots[t / 2.0], centers, radius):
                continue
        else:
            fld = simulate_field(mu, t, N, rng)
        kept += 1
        counts = _ball_counts(fld.positions, centers, eps_sq)
        hit = counts > 0
        singles += hit
        joint += np.all(hit, axis=0)
    return joint, singles, kept


def hitting_profile(
    req: HittingRequest,
    seed: int = 0,
    eps_list: tuple[float, ...] | None = None,
    boost: bool = False,
    workers: int = 1,
    chunk: int = 20_000,
):
    """Joint and marginal hit counts for a ladder of ball radii, scored on
    shared replicates. Returns (joint hits, single hits, eps_list).

    With boost=True, replicates whose time-t/2 field has no mass within
    3 sqrt(t) of any center are discarded early and scored as misses;
    the residual bias is a Gaussian tail below e^-9 relative.
    """
    eps_list = tuple(eps_list) if eps_list is not None else (req.eps,)
    args = (req.mu, req.t, req.resolution, req.centers, eps_list, boost)
    parts = _map_chunks(partial(_hit_chunk, args), req.reps, seed, chunk, workers)
    joint = sum(p[0] for p in parts)
    singles = sum(p[1] for p in parts)
    return joint, singles, eps_list


def estimate_hitting(
    req: HittingRequest,
    seed: int = 0,
    boost: bool = False,
    workers: int = 1,
    min_hits: int = 10,
) -> EstimateWithError:
    """P{all n balls are charged} with binomial standard error.

    Raises BudgetError (with a suggested replicate count) when fewer than
    `min_hits` joint hits were seen.
    """
    joint, singles, _ = hitting_profile(req, seed=seed, boost=boost, workers=workers)
    hits = int(joint[0])
    if hits < min_hits:
        rate = max(hits, 1) / req.reps
        raise BudgetError(
            f"only {hits} joint hits in {req.reps} replicates",
            suggested_reps=int(math.ceil(100.0 / rate)),
        )
    est = binomial_estimate(hits, req.reps)
    return EstimateWithError(
        value=est.value,
        stderr=est.stderr,
        reps=req.reps,
        method="monte_carlo",
        details={
            "hits": hits,
            "eps": req.eps,
            "singles": [int(s) for s in singles[:, 0]],
            "boost": boost,
        },
    )


@dataclass(frozen=True)
class FactorizationResult:
    joint: EstimateWithError
    marginals: tuple[EstimateWithError, EstimateWithError]
    hit_ratio: float
    hit_ratio_stderr: float
    moment_ratio: float
    ratio_of_ratios: float

    @property
    def ratio_of_ratios_stderr(self) -> float:
        return self.hit_ratio_stderr / self.moment_ratio


def joint_hitting_factorization(
    req: HittingRequest,
    seed: int = 0,
    boost: bool = False,
    workers: int = 1,
    min_hits: int = 10,
) -> FactorizationResult:
    """P_joint / (P_1 P_2) against the moment-density ratio
    q(x1, x2) / (q(x1) q(x2)); their quotient tends to 1 as eps -> 0.

    The delta-method standard error accounts for the covariances induced
    by scoring all three probabilities on the same replicates.
    """
    from .moments import MomentDensityRequest, process_moment_density

    if req.n != 2:
        raise ValidationError("factorization is a two-center experiment")
    joint, singles, _ = hitting_profile(req, seed=seed, boost=boost, workers=workers)
    hj = int(joint[0])
    h1, h2 = int(singles[0, 0]), int(singles[1, 0])
    if hj < min_hits:
        rate = max(hj, 1) / req.reps
        raise BudgetError(
            f"only {hj} joint hits in {req.reps} replicates",
            suggested_reps=int(math.ceil(100.0 / rate)),
        )
    reps = req.reps
    pj, p1, p2 = hj / reps, h1 / reps, h2 / reps
    hit_ratio = pj / (p1 * p2)
    # Var(log R), R = pj/(p1 p2), with Cov(pj, pk) = pj(1-pk) etc.
    var_log = (
        (1 - pj) / pj + (1 - p1) / p1 + (1 - p2) / p2
        - 2 * (1 - p1) - 2 * (1 - p2) + 2 * (pj - p1 * p2) / (p1 * p2)
    ) / reps
    hit_ratio_stderr = hit_ratio * math.sqrt(max(var_log, 0.0))

    x1, x2 = req.centers[0], req.centers[1]
    q_pair = process_moment_density(
        MomentDensityRequest(n=2, t=req.t, d=req.mu.d, xs=req.centers, mu=req.mu)
    ).value
    q_1 = process_moment_density(
        MomentDensityRequest(n=1, t=req.t, d=req.mu.d, xs=x1[None, :], mu=req.mu)
    ).value
    q_2 = process_moment_density(
        MomentDensityRequest(n=1, t=req.t, d=req.mu.d, xs=x2[None, :], mu=req.mu)
    ).value
    moment_ratio = q_pair / (q_1 * q_2)
    return FactorizationResult(
        joint=binomial_estimate(hj, reps, eps=req.eps),
        marginals=(binomial_estimate(h1, reps), binomial_estimate(h2, reps)),
        hit_ratio=hit_ratio,
        hit_ratio_stderr=hit_ratio_stderr,
        moment_ratio=moment_ratio,
        ratio_of_ratios=hit_ratio / moment_ratio,
    )


@dataclass
class WeightedSample:
    """Weighted empirical law; weights need not be normalized."""

    values: np.ndarray
    weights: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.sum(self.values * self.weights) / np.sum(self.weights))

    @property
    def ess(self) -> float:
        return effective_sample_size(self.weights)

    def mean_stderr(self) -> float:
        w = self.weights / self.weights.sum()
        m = self.mean
        return float(np.sqrt(np.sum(w**2 * (self.values - m) ** 2)))


def exterior_statistic(spec):
    """Named functional of a field, for Campbell weighting and the
    decoupling probes: "total_mass", ("ball_mass", center, radius) or
    ("box_mass", lo, hi). Callables pass through."""
    if callable(spec):
        return spec
    if spec == "total_mass":
        return lambda fld: fld.total_mass
    name = spec[0]
    if name == "ball_mass":
        _, center, radius = spec
        center = as_point(center)
        return lambda fld: fld.mass_in_ball(center, radius)
    if name == "box_mass":
        _, lo, hi = spec
        return lambda fld: fld.mass_in_box(lo, hi)
    raise ValidationError(f"unknown exterior statistic {spec!r}")


def _campbell_chunk(args, seed, lo, hi):
    mu, t, N, centers, eps, stat_spec = args
    stat = exterior_statistic(stat_spec)
    eps_sq = np.array([eps**2])
    values, weights = [], []
    for rep in range(lo, hi):
        rng = stream(seed, rep)
        fld = simulate_field(mu, t, N, rng)
        counts = _ball_counts(fld.positions, centers, eps_sq)[:, 0]
        if np.all(counts > 0):
            values.append(stat(fld))
            weights.append(float(np.prod(counts / N)))
    return np.asarray(values), np.asarray(weights)


def campbell_palm_estimate(
    functional,
    mu: DiscreteMeasure,
    t: float,
    centers,
    eps: float,
    reps: int,
    resolution: int = 10_000,
    seed: int = 0,
    workers: int = 1,
    chunk: int = 20_000,
) -> WeightedSample:
    """Empirical law of `functional` under the product-ball-mass weights
    w = prod_j field(B_{x_j}^eps).

    This is the sampling form of the Campbell-measure definition of the
    n-th order Palm law smeared over the balls; no hit conditioning is
    involved beyond w > 0.
    """
    centers = as_point_tuple(centers, mu.d)
    args = (mu, t, resolution, centers, eps, functional)
    parts = _map_chunks(partial(_campbell_chunk, args), reps, seed, chunk, workers)
    values = np.concatenate([p[0] for p in parts]) if parts else np.empty(0)
    weights = np.concatenate([p[1] for p in parts]) if parts else np.empty(0)
    if weights.size == 0 or weights.sum() <= 0.0:
        raise BudgetError("all Campbell weights vanished; increase reps or eps")
    return WeightedSample(values=values, weights=weights)


def stationary_ball_mass_conditional(
    eps: float,
    d: int,
    reps_target: int,
    resolution: int,
    seed: int = 0,
    age: float = 1.0,
    m0: float | None = None,
    max_attempts: int = 4_000_000,
) -> WeightedSample:
    """Weighted samples of the stationary-cluster ball mass conditioned on
    charging the ball: L[eta~(B_0^eps) | eta~(B_0^eps) > 0].

    The Lebesgue root is importance-sampled from N(0, (age + eps^2) I),
    which matches the hitting kernel, so the self-normalized weights
    1/proposal(y) are nearly flat.
    """
    if m0 is None:
        m0 = 0.1 * age
    rng = stream(seed, 0)
    var = age + eps**2
    masses, weights = [], []
    attempts = 0
    while len(masses) < reps_target and attempts < max_attempts:
        attempts += 1
        y = rng.standard_normal(d) * math.sqrt(var)
        positions = _conditioned_cluster(y, age, resolution, rng, m0)
        if positions is None:
            continue
        inside = int(np.sum(np.sum(positions**2, axis=1) < eps**2))
        if inside > 0:
            log_prop = -0.5 * d * math.log(2 * math.pi * var) - float(
                np.dot(y, y)
            ) / (2 * var)
            masses.append(inside / resolution)
            weights.append(math.exp(-log_prop))
    if not masses:
        raise BudgetError("stationary cluster never charged the ball; widen the budget")
    return WeightedSample(values=np.asarray(masses), weights=np.asarray(weights))


@dataclass
class DecouplingRung:
    eps: float
    hits: int
    dependence: float
    dependence_err: float
    ks_cluster: tuple[float, ...]
    ks_cluster_err: float
    ks_campbell: float
    ks_campbell_err: float
    campbell_ess: float


@dataclass
class DecouplingReport:
    rungs: list[DecouplingRung]
    reps: int

    def monotone_within_bars(self, attr: str) -> bool:
        vals, errs = [], []
        for rung in self.rungs:
            v = getattr(rung, attr)
            vals.append(max(v) if isinstance(v, tuple) else v)
            errs.append(
                rung.ks_cluster_err
                if attr == "ks_cluster"
                else rung.ks_campbell_err
                if attr == "ks_campbell"
                else rung.dependence_err
            )
        return all(
            vals[i + 1] <= vals[i] + errs[i] + errs[i + 1] for i in range(len(vals) - 1)
        )


def _decoupling_chunk(args, seed, lo, hi):
    mu, t, N, centers, eps_list, probe_spec = args
    probe = exterior_statistic(probe_spec)
    eps_sq = np.asarray(eps_list, dtype=float) ** 2
    rows = []
    for rep in range(lo, hi):
        rng = stream(seed, rep)
        fld = simulate_field(mu, t, N, rng)
        counts = _ball_counts(fld.positions, centers, eps_sq)
        if np.all(counts[:, 0] > 0):  # all hit at the coarsest radius
            rows.append(
                np.concatenate([(counts / N).ravel(), [probe(fld)]])
            )
    return np.asarray(rows)


def decoupling_experiment(
    mu: DiscreteMeasure,
    t: float,
    centers,
    probe,
    reps: int,
    resolution: int = 4_000,
    eps_ladder: tuple[float, ...] = DEFAULT_EPS_LADDER,
    seed: int = 0,
    workers: int = 1,
    chunk: int = 50_000,
    comparator_reps: int = 400,
    comparator_resolution: int | None = None,
    cluster_age: float = 1.0,
) -> DecouplingReport:
    """Local-conditioning decoupling probes over an eps ladder.

    Per rung, from hit-conditioned replicates (all balls charged):
      (a) rank dependence between the two ball masses,
      (b) weighted-KS distance of each conditional ball-mass law against
          the stationary-cluster conditional law at the same radius,
      (c) weighted-KS distance between the hit-conditioned law of the
          exterior probe statistic and its Campbell-weighted law.
    All replicates are shared across the ladder; (c)'s comparison reuses
    the same realizations with product-ball-mass weights, which is the
    Campbell estimator restricted to the conditioning event.
    """
    centers = as_point_tuple(centers, mu.d)
    n = centers.shape[0]
    if n != 2:
        raise ValidationError("the decoupling experiment uses two centers")
    eps_list = tuple(sorted(eps_ladder, reverse=True))
    args = (mu, t, resolution, centers, eps_list, probe)
    parts = _map_chunks(partial(_decoupling_chunk, args), reps, seed, chunk, workers)
    rows = np.concatenate([p for p in parts if p.size], axis=0)
    if rows.size == 0:
        raise BudgetError("no joint hits at the coarsest radius")
    n_eps = len(eps_list)
    ball_masses = rows[:, : n * n_eps].reshape(-1, n, n_eps)
    probe_vals = rows[:, -1]

    if comparator_resolution is None:
        comparator_resolution = resolution
    rungs = []
    for e_idx, eps in enumerate(eps_list):
        hit = np.all(ball_masses[:, :, e_idx] > 0.0, axis=1)
        nh = int(hit.sum())
        if nh < 10:
            raise BudgetError(
                f"only {nh} joint hits at eps={eps}",
                suggested_reps=int(math.ceil(reps * 50.0 / max(nh, 1))),
            )
        m1 = ball_masses[hit, 0, e_idx]
        m2 = ball_masses[hit, 1, e_idx]
        dep = abs(spearman(m1, m2))
        comparator = stationary_ball_mass_conditional(
            eps,
            mu.d,
            comparator_reps,
            comparator_resolution,
            seed=seed + 7_000_000 + e_idx,
            age=cluster_age,
        )
        ks_c = tuple(
            ks_distance_weighted(m, np.ones(nh), comparator.values, comparator.weights)
            for m in (m1, m2)
        )
        ks_c_err = ks_error_bar(nh, comparator.ess)
        # Campbell weights at this rung: product of ball masses over w > 0 rows
        w = ball_masses[:, 0, e_idx] * ball_masses[:, 1, e_idx]
        pos = w > 0.0
        ks_cb = ks_distance_weighted(
            probe_vals[hit], np.ones(nh), probe_vals[pos], w[pos]
        )
        ks_cb_err = ks_error_bar(nh, effective_sample_size(w[pos]))
        rungs.append(
            DecouplingRung(
                eps=eps,
                hits=nh,
                dependence=dep,
                dependence_err=1.0 / math.sqrt(max(nh - 1, 1)),
                ks_cluster=ks_c,
                ks_cluster_err=ks_c_err,
                ks_campbell=ks_cb,
                ks_campbell_err=ks_cb_err,
                campbell_ess=effective_sample_size(w[pos]),
            )
        )
    return DecouplingReport(rungs=rungs, reps=reps)


@dataclass
class MultiplicityReport:
    one_cluster_two_balls: EstimateWithError
    one_ball_two_clusters: EstimateWithError
    joint_hit: EstimateWithError
    covering_excess_mean: float
    eps: float
    h: float

    @property
    def multiplicity_ratio(self) -> float:
        """Worst multiplicity probability relative to the joint hit
        probability."""
        worst = max(self.one_cluster_two_balls.value, self.one_ball_two_clusters.value)
        return worst / self.joint_hit.value if self.joint_hit.value > 0 else float("inf")


def _multiplicity_chunk(args, seed, lo, hi):
    mu, t, N, centers, eps, h = args
    eps_sq = np.array([eps**2])
    s = t - h
    joint = single_multi = ball_multi = 0
    excess_sum = 0.0
    for rep in range(lo, hi):
        rng = stream(seed, rep)
        fld = simulate_field(mu, t, N, rng, checkpoints=(s,))
        labels = fld.ancestry[s]
        if fld.count == 0:
            continue
        d2 = np.sum((fld.positions[None, :, :] - centers[:, None, :]) ** 2, axis=2)
        in_ball = d2 < eps_sq[0]
        label_sets = [np.unique(labels[in_ball[j]]) for j in range(centers.shape[0])]
        hits = [ls.size > 0 for ls in label_sets]
        if all(hits):
            joint += 1
            if any(ls.size >= 2 for ls in label_sets):
                ball_multi += 1
            a12 = np.intersect1d(label_sets[0], label_sets[1]).size
            assignments = label_sets[0].size * label_sets[1].size - a12
            excess_sum += max(assignments - 1, 0)
        if np.intersect1d(label_sets[0], label_sets[1]).size > 0:
            single_multi += 1
    return joint, single_multi, ball_multi, excess_sum


def multiplicity_diagnostics(
    mu: DiscreteMeasure,
    t: float,
    centers,
    eps: float,
    h: float,
    reps: int,
    resolution: int = 4_000,
    seed: int = 0,
    workers: int = 1,
    chunk: int = 50_000,
) -> MultiplicityReport:
    """Multiple-hit probabilities for the age-h cluster decomposition.

    one_cluster_two_balls: some single h-cluster charges at least two of
    the balls. one_ball_two_clusters: all balls are charged and some ball
    is charged by two or more distinct h-clusters (the multiplicity event
    inside the covering; unconditionally the per-ball multiplicity is of
    the same order as a single hit and would not vanish relative to the
    joint hit). covering_excess_mean reports the mean of
    (#distinct-cluster coverings - 1)_+.
    """
    centers = as_point_tuple(centers, mu.d)
    d = mu.d
    if d >= 3 and not (eps**2 < h <= eps):
        raise ConfigurationError(
            f"regime violation for d>=3: need eps^2 < h <= eps, got eps={eps}, h={h}"
        )
    if not 0.0 < h < t:
        raise ConfigurationError("cluster age h must lie in (0, t)")
    args = (mu, t, resolution, centers, eps, h)
    parts = _map_chunks(partial(_multiplicity_chunk, args), reps, seed, chunk, workers)
    joint = sum(p[0] for p in parts)
    single_multi = sum(p[1] for p in parts)
    ball_multi = sum(p[2] for p in parts)
    excess = sum(p[3] for p in parts)
    if joint == 0:
        raise BudgetError("no joint hits observed", suggested_reps=reps * 10)
    return MultiplicityReport(
        one_cluster_two_balls=binomial_estimate(single_multi, reps),
        one_ball_two_clusters=binomial_estimate(ball_multi, reps),
        joint_hit=binomial_estimate(joint, reps),
        covering_excess_mean=excess / reps,
        eps=eps,
        h=h,
    )
