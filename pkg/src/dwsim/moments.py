"""Cluster and process moment densities of orders one to three.

Order 1 is the heat kernel. Order 2 reduces, by the Gaussian product
identity, to a one-dimensional time integral

    q_t^2(x1, x2) = 2 int_0^t p_{2(t-s)}(x1 - x2) p_{(t+s)/2}((x1+x2)/2) ds,

evaluated by adaptive Simpson quadrature; the unreduced double integral
is kept alive in the test suite as an oracle. Order 3 is Monte Carlo,
either through the uniform-tree sampler or through a backward recursion
that splits off one pair at a sampled last branching time; the two
estimators are mutual oracles. Process moments assemble cluster
densities over set partitions with the initial measure convolved in.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .estimates import EstimateWithError
from .exceptions import DiagonalError, UnsupportedOrderError, ValidationError
from .kernels import (
    DiscreteMeasure,
    as_point,
    as_point_tuple,
    convolve_heat,
    diagonal_distance,
    heat_density,
    log_heat_density,
)
from .trees import cluster_moment_density_mc, sample_leaf_batch


@dataclass(frozen=True)
class MomentDensityRequest:
    """Evaluation request for a process moment density q_{mu,t} at a tuple.

    `mu` absent means a single cluster rooted at the origin.
    """

    n: int
    t: float
    d: int
    xs: np.ndarray
    mu: DiscreteMeasure | None = None

    def __post_init__(self):
        xs = as_point_tuple(self.xs, self.d)
        if xs.shape[0] != self.n:
            raise ValidationError("tuple order does not match n")
        if self.t <= 0.0:
            raise ValidationError("time must be positive")
        if diagonal_distance(xs) == 0.0:
            raise DiagonalError("tuple lies on the diagonal")
        object.__setattr__(self, "xs", xs)


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-8, max_depth: int = 48) -> float:
    """Classic adaptive Simpson with absolute tolerance."""

    def simpson(x0, x2, f0, f1, f2):
        return (x2 - x0) / 6.0 * (f0 + 4.0 * f1 + f2)

    def recurse(x0, x2, f0, f1, f2, whole, tol, depth):
        xm = 0.5 * (x0 + x2)
        lm, rm = 0.5 * (x0 + xm), 0.5 * (xm + x2)
        fl, fr = f(lm), f(rm)
        left = simpson(x0, xm, f0, fl, f1)
        right = simpson(xm, x2, f1, fr, f2)
        if depth >= max_depth or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return recurse(x0, xm, f0, fl, f1, left, tol / 2.0, depth + 1) + recurse(
            xm, x2, f1, fr, f2, right, tol / 2.0, depth + 1
        )

    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = simpson(a, b, fa, fm, fb)
    return recurse(a, b, fa, fm, fb, whole, tol, 0)


def q1(t: float, x) -> float:
    """First-order cluster moment density: the heat kernel itself."""
    return float(heat_density(as_point(x), t))


def _q2_integrand_factory(t: float, delta: np.ndarray, mid: np.ndarray):
    def integrand(s: float) -> float:
        if s >= t:
            return 0.0
        return float(
            np.exp(log_heat_density(delta, 2.0 * (t - s)) + log_heat_density(mid, 0.5 * (t + s)))
        )

    return integrand


def q2_cluster(t: float, x1, x2, tol: float = 1e-8) -> float:
    """Second-order cluster moment density by 1-D adaptive quadrature.

    Symmetric in (x1, x2); raises on the diagonal, where the density
    diverges for d >= 2.
    """
    if t <= 0.0:
        raise ValidationError("time must be positive")
    x1 = as_point(x1)
    x2 = as_point(x2)
    delta = x1 - x2
    if np.all(delta == 0.0):
        raise DiagonalError("q_t^2 diverges on the diagonal")
    mid = 0.5 * (x1 + x2)
    integrand = _q2_integrand_factory(t, delta, mid)
    # the integrand dies off superexponentially at s -> t; split there so
    # the adaptive pass is not fooled by the flat tail
    s_star = t - min(t / 2.0, float(np.dot(delta, delta)) / 8.0)
    left = adaptive_simpson(integrand, 0.0, s_star, tol / 2.0)
    right = adaptive_simpson(integrand, s_star, t, tol / 2.0)
    return 2.0 * (left + right)


def _q2_base_nodes(n_coarse: int = 64, dyadic: int = 48, per_panel: int = 8):
    """Quadrature grid on [0, 1] for batched q^2 evaluation: Gauss-Legendre
    on [0, 1/2] plus dyadically graded panels accumulating at 1, where the
    integrand dies off superexponentially."""
    xs, ws = np.polynomial.legendre.leggauss(n_coarse)
    nodes = [0.25 * (xs + 1.0)]
    weights = [0.25 * ws]
    xs8, ws8 = np.polynomial.legendre.leggauss(per_panel)
    lo = 0.5
    for j in range(1, dyadic + 1):
        hi = 1.0 - 2.0 ** (-j - 1)
        half = 0.5 * (hi - lo)
        nodes.append(lo + half * (xs8 + 1.0))
        weights.append(half * ws8)
        lo = hi
    return np.concatenate(nodes), np.concatenate(weights)


_Q2_BASE: tuple[np.ndarray, np.ndarray] | None = None


def q2_cluster_batch(t, x1s, x2s, chunk: int = 4_000) -> np.ndarray:
    """Vectorized q_t^2 over many pairs; the same time integral on a fixed
    graded grid, cross-checked against the adaptive version in the tests.

    `t` may be a scalar or a per-row array of horizons.
    """
    global _Q2_BASE
    if _Q2_BASE is None:
        _Q2_BASE = _q2_base_nodes()
    base_nodes, base_weights = _Q2_BASE
    x1s = np.atleast_2d(np.asarray(x1s, dtype=float))
    x2s = np.atleast_2d(np.asarray(x2s, dtype=float))
    rows = x1s.shape[0]
    ts = np.broadcast_to(np.asarray(t, dtype=float), (rows,))
    delta = x1s - x2s
    mid = 0.5 * (x1s + x2s)
    d = x1s.shape[1]
    dsq = np.sum(delta**2, axis=1)
    msq = np.sum(mid**2, axis=1)
    log_env = -0.5 * d * np.log(2.0 * np.pi)
    out = np.empty(rows)
    for lo in range(0, rows, chunk):
        hi = min(lo + chunk, rows)
        tc = ts[lo:hi, None]
        nodes = tc * base_nodes[None, :]
        var1 = 2.0 * (tc - nodes)
        var2 = 0.5 * (tc + nodes)
        logs = (
            2.0 * log_env
            - 0.5 * d * np.log(var1)
            - dsq[lo:hi, None] / (2.0 * var1)
            - 0.5 * d * np.log(var2)
            - msq[lo:hi, None] / (2.0 * var2)
        )
        out[lo:hi] = 2.0 * np.sum(np.exp(logs) * (tc * base_weights[None, :]), axis=1)
    return out


def q2_norm(t: float, d: int, half_width: float | None = None) -> float:
    """Total mass of q_t^2 over a truncated product domain, by quadrature
    in the difference/midpoint coordinates; the Gaussian tail outside the
    truncation is provably below 1e-10 at the default width."""
    from scipy.special import erf

    if half_width is None:
        half_width = 8.0 * np.sqrt(2.0 * t) * 2.0

    def box_mass(var: float) -> float:
        return erf(half_width / np.sqrt(2.0 * var)) ** d

    integrand = lambda s: box_mass(2.0 * (t - s)) * box_mass(0.5 * (t + s)) if s < t else 1.0
    return 2.0 * adaptive_simpson(integrand, 0.0, t, 1e-10)


@dataclass(frozen=True)
class Q3CrossCheck:
    """Pair of order-3 estimators: uniform-tree KDE and backward recursion."""

    tree: EstimateWithError
    backward: EstimateWithError

    @property
    def value(self) -> float:
        return self.backward.value

    @property
    def stderr(self) -> float:
        return self.backward.stderr

    def consistent(self, nsigma: float = 3.0) -> bool:
        return self.tree.agrees_with(self.backward, nsigma)


def _q3_backward(t: float, xs: np.ndarray, reps: int, rng: np.random.Generator) -> EstimateWithError:
    """Backward-recursion estimator for q_t^3.

    The last branching time s has density 2 s / t^2 on [0, t]; given s and
    a uniformly chosen pair {i, j}, the pair's parent u and the remaining
    leaf v are Gaussian around the pair midpoint and the third point, and
    the sample value is (3 t^2 / s) p_{2(t-s)}(x_i - x_j) q_s^2(u, v).
    """
    d = xs.shape[1]
    pairs = [(0, 1, 2), (0, 2, 1), (1, 2, 0)]
    s = t * np.sqrt(rng.random(reps))  # density 2s/t^2
    which = rng.integers(0, 3, size=reps)
    vals = np.empty(reps)
    for p, (i, j, k) in enumerate(pairs):
        rows = np.flatnonzero(which == p)
        if rows.size == 0:
            continue
        sp = s[rows]
        mid = 0.5 * (xs[i] + xs[j])
        u = mid[None, :] + rng.standard_normal((rows.size, d)) * np.sqrt(0.5 * (t - sp))[:, None]
        v = xs[k][None, :] + rng.standard_normal((rows.size, d)) * np.sqrt(t - sp)[:, None]
        q2v = q2_cluster_batch(sp, u, v)
        diff_sq = float(np.sum((xs[i] - xs[j]) ** 2))
        gauss = np.exp(
            -0.5 * d * np.log(4.0 * np.pi * (t - sp)) - diff_sq / (4.0 * (t - sp))
        )
        vals[rows] = (3.0 * t**2 / sp) * gauss * q2v
    return EstimateWithError(
        value=float(vals.mean()),
        stderr=float(vals.std(ddof=1) / np.sqrt(reps)),
        reps=reps,
        method="monte_carlo",
        details={"estimator": "backward_recursion"},
    )


def q3_cluster_mc(
    t: float,
    xs,
    reps: int,
    rng: np.random.Generator,
    method: str = "both",
    bandwidth: float | None = None,
) -> Q3CrossCheck | EstimateWithError:
    """Third-order cluster moment density at an off-diagonal triple.

    method = "tree" | "backward" | "both"; "both" returns the cross-checked
    pair used by the recursion-consistency acceptance test.
    """
    xs = as_point_tuple(xs)
    if xs.shape[0] != 3:
        raise ValidationError("q3 needs a tuple of exactly 3 points")
    if diagonal_distance(xs) == 0.0:
        raise DiagonalError("tuple lies on the diagonal")
    d = xs.shape[1]
    if method == "backward":
        return _q3_backward(t, xs, reps, rng)
    if method == "tree":
        return cluster_moment_density_mc(3, t, d, xs, reps, bandwidth=bandwidth, rng=rng)
    if method != "both":
        raise ValidationError(f"unknown method {method!r}")
    tree = cluster_moment_density_mc(3, t, d, xs, reps, bandwidth=bandwidth, rng=rng)
    backward = _q3_backward(t, xs, reps, rng)
    return Q3CrossCheck(tree=tree, backward=backward)


def _graded_time_grid(t: float, n_coarse: int, per_panel: int = 8, dyadic: int = 32):
    zs, ws_ = np.polynomial.legendre.leggauss(n_coarse)
    nodes = [0.25 * t * (zs + 1.0)]
    weights = [0.25 * t * ws_]
    z8, w8 = np.polynomial.legendre.leggauss(per_panel)
    lo = t / 2.0
    for j in range(1, dyadic):
        hi = t * (1.0 - 2.0 ** (-j - 1))
        half = 0.5 * (hi - lo)
        nodes.append(lo + half * (z8 + 1.0))
        weights.append(half * w8)
        lo = hi
    return np.concatenate(nodes), np.concatenate(weights)


def q3_forward_quadrature(t: float, xs, n_s: int = 48, gh_nodes: int = 20) -> EstimateWithError:
    """Third-order cluster moment density through the forward recursion:
    the trunk splits at time s into a singleton and a pair,

        q_t^3(x) = 2 sum_i int_0^t ds E_u [ q_{t-s}^2(x_j - u, x_k - u) ]
                    * p_t(x_i),   u ~ N((s/t) x_i, s(t-s)/t I),

    after merging the two heat kernels touching the singleton. The
    expectation is Gauss-Hermite; its integrand stays off-diagonal, so
    the quadrature converges exponentially.
    """
    xs = as_point_tuple(xs)
    if xs.shape[0] != 3:
        raise ValidationError("this quadrature is order 3")
    if diagonal_distance(xs) == 0.0:
        raise DiagonalError("tuple lies on the diagonal")
    d = xs.shape[1]
    z, w = _gauss_hermite_nodes(gh_nodes)
    grids = np.meshgrid(*([z] * d), indexing="ij")
    zpts = np.stack([g.ravel() for g in grids], axis=-1)
    wgrid = np.meshgrid(*([w] * d), indexing="ij")
    wts = np.prod(np.stack([g.ravel() for g in wgrid], axis=-1), axis=1)
    s_nodes, s_weights = _graded_time_grid(t, n_s)

    total = 0.0
    n_nodes = s_nodes.size
    n_z = zpts.shape[0]
    trow = np.repeat(t - s_nodes, n_z)
    for i, j, k in [(0, 1, 2), (1, 0, 2), (2, 0, 1)]:
        pxi = float(heat_density(xs[i], t))
        centers = (s_nodes[:, None] / t) * xs[i][None, :]
        spread = np.sqrt(s_nodes * (t - s_nodes) / t)
        u = (centers[:, None, :] + spread[:, None, None] * zpts[None, :, :]).reshape(-1, d)
        vals = q2_cluster_batch(trow, xs[j][None, :] - u, xs[k][None, :] - u)
        acc = float(np.sum(s_weights * (vals.reshape(n_nodes, n_z) @ wts)))
        total += 2.0 * pxi * acc
    return EstimateWithError(total, 0.0, 0, "quadrature", tolerance=1e-6)


def q3_backward_quadrature(t: float, xs, n_s: int = 80, n_r: int = 64) -> EstimateWithError:
    """Third-order cluster moment density by nested quadrature over the
    backward recursion (last branching first).

    Expands the inner second-order density by its own time integral; the
    four resulting Gaussian kernels integrate out in closed form per
    (s, r) node pair, leaving a 2-D time quadrature. All isotropic, so
    the 2d-dimensional spatial integral reduces to scalar 2x2 linear
    algebra per node.
    """
    xs = as_point_tuple(xs)
    if xs.shape[0] != 3:
        raise ValidationError("this quadrature is order 3")
    if diagonal_distance(xs) == 0.0:
        raise DiagonalError("tuple lies on the diagonal")
    d = xs.shape[1]

    # graded s grid accumulating at s = t (the integrand dies off there)
    zs, ws_ = np.polynomial.legendre.leggauss(n_s)
    s_nodes = [0.25 * t * (zs + 1.0)]
    s_weights = [0.25 * t * ws_]
    z8, w8 = np.polynomial.legendre.leggauss(12)
    lo = t / 2.0
    for j in range(1, 44):
        hi = t * (1.0 - 2.0 ** (-j - 1))
        half = 0.5 * (hi - lo)
        s_nodes.append(lo + half * (z8 + 1.0))
        s_weights.append(half * w8)
        lo = hi
    s_nodes = np.concatenate(s_nodes)
    s_weights = np.concatenate(s_weights)
    zr, wr = np.polynomial.legendre.leggauss(n_r)

    total = 0.0
    pairs = [(0, 1, 2), (0, 2, 1), (1, 2, 0)]
    for i, j, k in pairs:
        delta_sq = float(np.sum((xs[i] - xs[j]) ** 2))
        a_vec = 0.5 * (xs[i] + xs[j])
        b_vec = xs[k]
        asq = float(np.dot(a_vec, a_vec))
        bsq = float(np.dot(b_vec, b_vec))
        ab = float(np.dot(a_vec, b_vec))
        for s, sw in zip(s_nodes, s_weights):
            r = 0.5 * s * (zr + 1.0)
            rw = 0.5 * s * wr
            alpha = 2.0 * (s - r)
            beta = 0.5 * (s + r)
            gamma = 0.5 * (t - s)
            delta = t - s
            p11 = 1.0 / alpha + 1.0 / (4.0 * beta) + 1.0 / gamma
            p22 = 1.0 / alpha + 1.0 / (4.0 * beta) + 1.0 / delta
            p12 = -1.0 / alpha + 1.0 / (4.0 * beta)
            det = p11 * p22 - p12**2
            # log of the closed-form (u, v) integral, d-dimensional
            log_pref = -0.5 * d * (
                np.log(alpha) + np.log(beta) + np.log(gamma) + np.log(delta)
            ) - d * np.log(2.0 * np.pi) - 0.5 * d * np.log(det)
            quad = (
                p22 * asq / gamma**2
                - 2.0 * p12 * ab / (gamma * delta)
                + p11 * bsq / delta**2
            ) / det
            log_inner = log_pref + 0.5 * quad - 0.5 * (asq / gamma + bsq / delta)
            log_gauss = -0.5 * d * np.log(4.0 * np.pi * (t - s)) - delta_sq / (
                4.0 * (t - s)
            )
            total += 4.0 * sw * float(np.sum(rw * np.exp(log_inner + log_gauss)))
    return EstimateWithError(total, 0.0, 0, "quadrature", tolerance=1e-6)


def _set_partitions(items: tuple[int, ...]):
    if len(items) == 1:
        yield [list(items)]
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1 :]
        yield [[first]] + part


def cluster_density(
    n: int,
    t: float,
    xs,
    reps: int = 200_000,
    rng: np.random.Generator | None = None,
) -> EstimateWithError:
    """Cluster moment density q_t^n for n <= 3, with whatever method is
    exact at that order."""
    xs = as_point_tuple(xs)
    if n == 1:
        return EstimateWithError(q1(t, xs[0]), 0.0, 0, "closed_form")
    if n == 2:
        return EstimateWithError(q2_cluster(t, xs[0], xs[1]), 0.0, 0, "quadrature", tolerance=1e-8)
    if n == 3:
        if rng is None:
            raise ValidationError("order 3 is Monte Carlo and needs a generator")
        return _q3_backward(t, xs, reps, rng)
    raise UnsupportedOrderError("cluster densities implemented for n <= 3")


def process_moment_density(
    req: MomentDensityRequest,
    rng: np.random.Generator | None = None,
    reps: int = 200_000,
) -> EstimateWithError:
    """Density of the n-th moment measure of the process at time t started
    from `req.mu`: sum over partitions of products of measure-convolved
    cluster densities. n = 1 reduces to (mu * p_t)."""
    if req.n > 3:
        raise UnsupportedOrderError("process moment densities implemented for n <= 3")
    mu = req.mu
    if mu is None:
        raise ValidationError("process moments need an initial measure; "
                              "use cluster_density for a single cluster")
    xs = req.xs
    total = 0.0
    total_err = 0.0
    is_mc = False
    for part in _set_partitions(tuple(range(req.n))):
        term = 1.0
        term_err = 0.0
        for block in part:
            pts = xs[block]
            if len(block) == 1:
                factor = convolve_heat(mu, req.t, pts)
                ferr = 0.0
            else:
                factor = 0.0
                ferr = 0.0
                for atom, mass in zip(mu.points, mu.masses):
                    shifted = pts - atom[None, :]
                    est = cluster_density(len(block), req.t, shifted, reps=reps, rng=rng)
                    factor += mass * est.value
                    ferr += mass * est.stderr
                    if est.method == "monte_carlo":
                        is_mc = True
            term_err = abs(term) * ferr + abs(factor) * term_err
            term *= factor
        total += term
        total_err += term_err
    if is_mc:
        return EstimateWithError(total, total_err, reps, "monte_carlo")
    return EstimateWithError(total, 0.0, 0, "quadrature", tolerance=1e-8)


def _gauss_hermite_nodes(m: int):
    z, w = hermegauss(m)
    return z, w / np.sqrt(2.0 * np.pi)


def _radial_norm_density(a: np.ndarray, mu: float, var: float, d: int) -> np.ndarray:
    """Density of |W| for W ~ N(m, var I_d) with |m| = mu, d in {2, 3}."""
    from scipy.special import i0e

    a = np.asarray(a, dtype=float)
    if d == 2:
        return (a / var) * i0e(a * mu / var) * np.exp(-((a - mu) ** 2) / (2.0 * var))
    if d == 3:
        sigma = np.sqrt(var)
        if mu < 1e-10 * sigma:
            return np.sqrt(2.0 / np.pi) * a**2 / sigma**3 * np.exp(-(a**2) / (2.0 * var))
        up = np.exp(-((a - mu) ** 2) / (2.0 * var))
        down = np.exp(-((a + mu) ** 2) / (2.0 * var))
        return a / (mu * sigma * np.sqrt(2.0 * np.pi)) * (up - down)
    raise ValidationError("radial reduction implemented for d in {2, 3}")


def _graded_interval(lo: float, hi: float, per_panel: int = 8, dyadic: int = 40):
    """Panels of [lo, hi] dyadically refined towards lo (for endpoint
    singularities) plus a smooth remainder."""
    xs, ws = np.polynomial.legendre.leggauss(per_panel)
    nodes, weights = [], []
    right = hi
    for _ in range(dyadic):
        left = lo + (right - lo) / 2.0 if right - lo > (hi - lo) * 2.0 ** (-dyadic) else lo
        half = 0.5 * (right - left)
        nodes.append(left + half * (xs + 1.0))
        weights.append(half * ws)
        if left == lo:
            break
        right = left
    return np.concatenate(nodes), np.concatenate(weights)


def markov_split_check(
    s: float, t: float, xs, nodes_outer: int = 40, nodes_radial: int = 96
) -> tuple[float, float]:
    """Both sides of the order-2 time-splitting identity at horizon s + t.

    lhs: q_{s+t}^2 by adaptive quadrature. rhs: the cluster born at time 0
    either is still one lineage at time s and branches later (p_s
    convolved against q_t^2, by Gauss-Hermite over the lineage position)
    or has already branched before s (q_s^2 convolved against two
    independent heat kernels, integrated in difference/midpoint polar
    coordinates where q^2 is a function of the two radii alone).
    """
    if s <= 0.0 or t <= 0.0:
        raise ValidationError("both time arguments must be positive")
    xs = as_point_tuple(xs)
    if xs.shape[0] != 2:
        raise ValidationError("the split check is an order-2 identity")
    x1, x2 = xs[0], xs[1]
    if np.all(x1 == x2):
        raise DiagonalError("tuple lies on the diagonal")
    d = xs.shape[1]

    lhs = q2_cluster(s + t, x1, x2)

    # term 1: E_{u ~ N(0, s I)} q_t^2(x1 - u, x2 - u)
    z, w = _gauss_hermite_nodes(nodes_outer)
    grids = np.meshgrid(*([z] * d), indexing="ij")
    u = np.sqrt(s) * np.stack([g.ravel() for g in grids], axis=-1)
    wgrid = np.meshgrid(*([w] * d), indexing="ij")
    wu = np.prod(np.stack([g.ravel() for g in wgrid], axis=-1), axis=1)
    term1 = float(np.sum(wu * q2_cluster_batch(t, x1[None, :] - u, x2[None, :] - u)))

    # term 2: E q_s^2(U1, U2), U_i ~ N(x_i, t I) independent. In the
    # coordinates W = U1 - U2 ~ N(x1-x2, 2t I), M = (U1+U2)/2 ~ N(mid, t/2 I)
    # (independent), q_s^2 depends on (|W|, |M|) only, so the integral is a
    # 2-D one against the radial norm densities; |W| is graded towards 0
    # where q_s^2 has its integrable diagonal singularity.
    mu_w = float(np.linalg.norm(x1 - x2))
    mu_m = float(np.linalg.norm(0.5 * (x1 + x2)))
    a_hi = mu_w + 9.0 * np.sqrt(2.0 * t)
    a_nodes, a_weights = _graded_interval(0.0, a_hi)
    zb, wb = np.polynomial.legendre.leggauss(nodes_radial)
    b_lo = max(0.0, mu_m - 9.0 * np.sqrt(0.5 * t))
    b_hi = mu_m + 9.0 * np.sqrt(0.5 * t)
    b_nodes = b_lo + 0.5 * (b_hi - b_lo) * (zb + 1.0)
    b_weights = 0.5 * (b_hi - b_lo) * wb

    fa = _radial_norm_density(a_nodes, mu_w, 2.0 * t, d) * a_weights
    fb = _radial_norm_density(b_nodes, mu_m, 0.5 * t, d) * b_weights
    A, B = np.meshgrid(a_nodes, b_nodes, indexing="ij")
    u1 = np.zeros((A.size, d))
    u2 = np.zeros((A.size, d))
    u1[:, 0] = B.ravel()
    u2[:, 0] = B.ravel()
    u1[:, 1] = 0.5 * A.ravel()
    u2[:, 1] = -0.5 * A.ravel()
    qvals = q2_cluster_batch(s, u1, u2).reshape(A.shape)
    term2 = float(fa @ qvals @ fb)

    return lhs, term1 + term2
