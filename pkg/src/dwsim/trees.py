"""Marked binary trees with ranked splitting times and their Brownian
embedding.

A discrete topology on n leaves is encoded in backward-construction
normal form: for each split rank k (rank 1 = earliest split) the
unordered pair of min-leaf-labels of the two subtrees that the rank-k
vertex separates. Two topologies are equal iff their encodings are
equal; the encoding is what the three sampling constructions are
compared on.

The continuous tree puts the n-1 split ranks at the points of a uniform
binomial process on [0, t] and runs independent Brownian motions along
the branches. The leaf vector of that tree, scaled by n! t^(n-1), has
the order-n cluster moment density, which is what
cluster_moment_density_mc estimates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimates import EstimateWithError
from .exceptions import DiagonalError, ValidationError
from .kernels import as_point, as_point_tuple, cluster_density_envelope, diagonal_distance
from .point_processes import sample_uniform_binomial
from .streams import RunningMoments

MAX_ENUMERATION_ORDER = 6

TOPOLOGY_METHODS = ("forward", "backward", "sideways")


@dataclass(frozen=True)
class DiscreteTreeTopology:
    """splits[k-1] is the (sorted) pair of min-leaf-labels of the two
    subtrees merged at split rank k; leaves carry labels 1..n."""

    n: int
    splits: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.n < 2 or len(self.splits) != self.n - 1:
            raise ValidationError("a topology on n leaves has n-1 ranked splits")

    @property
    def key(self) -> str:
        return ";".join(f"{a}~{b}" for a, b in self.splits)

    def children_by_rank(self) -> dict[int, tuple]:
        """Reconstruct the vertex tree: rank -> (left, right), children
        being either leaf labels (int) or higher split ranks ('r', k)."""
        holder: dict[int, object] = {m: m for m in range(1, self.n + 1)}
        out: dict[int, tuple] = {}
        for rank in range(self.n - 1, 0, -1):
            a, b = self.splits[rank - 1]
            out[rank] = (holder[a], holder[b])
            holder[a] = ("r", rank)
            del holder[b]
        return out


def tree_count(n: int) -> int:
    """n! (n-1)! 2^(1-n), the number of marked binary trees with n leaves
    and distinct ordered splitting ranks."""
    return math.factorial(n) * math.factorial(n - 1) // 2 ** (n - 1)


def enumerate_topologies(n: int) -> list[DiscreteTreeTopology]:
    """All topologies on n leaves, each generated exactly once through the
    backward construction (joins are unordered pairs of current roots)."""
    if not 2 <= n <= MAX_ENUMERATION_ORDER:
        raise ValidationError(
            f"enumeration supported for 2 <= n <= {MAX_ENUMERATION_ORDER} (combinatorial blowup)"
        )
    results: list[DiscreteTreeTopology] = []
    splits: list[tuple[int, int]] = [(0, 0)] * (n - 1)

    def backward(ids: tuple[int, ...], rank: int):
        if rank == 0:
            results.append(DiscreteTreeTopology(n, tuple(splits)))
            return
        m = len(ids)
        for i in range(m):
            for j in range(i + 1, m):
                a, b = ids[i], ids[j]
                splits[rank - 1] = (a, b)
                rest = ids[:j] + ids[j + 1 :]
                backward(rest, rank - 1)

    backward(tuple(range(1, n + 1)), n - 1)
    expected = tree_count(n)
    if len(results) != expected or len({t.key for t in results}) != expected:
        raise AssertionError("backward enumeration produced a wrong tree count")
    return results


def _sample_backward(n: int, rng: np.random.Generator) -> DiscreteTreeTopology:
    ids = list(range(1, n + 1))
    splits: list[tuple[int, int]] = [(0, 0)] * (n - 1)
    for rank in range(n - 1, 0, -1):
        m = len(ids)
        i = int(rng.integers(m))
        j = int(rng.integers(m - 1))
        if j >= i:
            j += 1
        a, b = ids[i], ids[j]
        if a > b:
            a, b = b, a
        splits[rank - 1] = (a, b)
        ids.remove(b)
    return DiscreteTreeTopology(n, tuple(splits))


def _splits_from_paths(
    n: int, attachments: list[list[tuple[int, int]]], marks: np.ndarray
) -> tuple[tuple[int, int], ...]:
    """Canonical encoding of a tree given in path form.

    Path p was born at some rank and carries the ordered attachments
    (rank, child_path) made onto it. Leaf of path p has mark marks[p].
    """
    for att in attachments:
        att.sort()
    splits: list[tuple[int, int]] = [(0, 0)] * (n - 1)

    def min_from(p: int, i: int) -> int:
        if i == len(attachments[p]):
            return int(marks[p])
        rank, child = attachments[p][i]
        above = min_from(p, i + 1)
        below = min_from(child, 0)
        a, b = (above, below) if above < below else (below, above)
        splits[rank - 1] = (a, b)
        return a

    min_from(0, 0)
    return tuple(splits)


def _sample_forward(n: int, rng: np.random.Generator) -> DiscreteTreeTopology:
    # at step k there are k paths, all alive; split a uniformly chosen one
    attachments: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for k in range(1, n):
        parent = int(rng.integers(k))
        attachments[parent].append((k, k))
    marks = rng.permutation(n) + 1
    return DiscreteTreeTopology(n, _splits_from_paths(n, attachments, marks))


def _sample_sideways(n: int, rng: np.random.Generator) -> DiscreteTreeTopology:
    # ranks arrive in uniformly permuted order; each new branch attaches to
    # the rightmost (equivalently most recently created) path alive at its
    # rank, which keeps the planar embedding crossing-free
    perm = rng.permutation(n - 1) + 1
    births = [0] * n
    attachments: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for step in range(1, n):
        rank = int(perm[step - 1])
        parent = max(p for p in range(step) if births[p] < rank)
        births[step] = rank
        attachments[parent].append((rank, step))
    marks = rng.permutation(n) + 1
    return DiscreteTreeTopology(n, _splits_from_paths(n, attachments, marks))


def sample_topology(n: int, method: str, rng: np.random.Generator) -> DiscreteTreeTopology:
    """Uniform topology via the forward, backward or sideways construction."""
    if n < 2:
        raise ValidationError("need at least two leaves")
    if method == "backward":
        return _sample_backward(n, rng)
    if method == "forward":
        return _sample_forward(n, rng)
    if method == "sideways":
        return _sample_sideways(n, rng)
    raise ValidationError(f"unknown construction {method!r}; pick one of {TOPOLOGY_METHODS}")


@dataclass(frozen=True)
class MarkedBrownianTree:
    """A sampled continuous tree: topology, split times on [0, t], and the
    leaf positions ordered by mark (row i-1 = leaf marked i)."""

    topology: DiscreteTreeTopology | None
    split_times: np.ndarray
    t: float
    root: np.ndarray
    leaf_positions: np.ndarray

    @property
    def n(self) -> int:
        return self.leaf_positions.shape[0]

    @property
    def d(self) -> int:
        return self.leaf_positions.shape[1]


def sample_brownian_tree(
    n: int, t: float, d: int, root, rng: np.random.Generator
) -> MarkedBrownianTree:
    """Uniform marked Brownian tree on [0, t] rooted at `root`.

    n = 1 degenerates to a single Brownian leaf N(root, t I).
    """
    if n < 1:
        raise ValidationError("need at least one leaf")
    if t <= 0.0:
        raise ValidationError("horizon must be positive")
    root = as_point(root)
    if root.size != d:
        raise ValidationError("root dimension mismatch")
    if n == 1:
        leaf = root + np.sqrt(t) * rng.standard_normal(d)
        return MarkedBrownianTree(None, np.empty(0), t, root, leaf[None, :])

    topology = _sample_backward(n, rng)
    times = sample_uniform_binomial(n - 1, t, rng)
    children = topology.children_by_rank()
    leaves = np.empty((n, d))

    # DFS from the rank-1 vertex; the root segment covers [0, times[0]]
    stack = [(1, root, 0.0)]
    while stack:
        rank, pos, t0 = stack.pop()
        vt = times[rank - 1]
        vpos = pos + np.sqrt(vt - t0) * rng.standard_normal(d)
        for child in children[rank]:
            if isinstance(child, tuple):
                stack.append((child[1], vpos, vt))
            else:
                leaves[child - 1] = vpos + np.sqrt(t - vt) * rng.standard_normal(d)
    return MarkedBrownianTree(topology, times, t, root, leaves)


def sample_leaf_batch(
    n: int, t: float, d: int, batch: int, rng: np.random.Generator
) -> np.ndarray:
    """Leaf vectors of `batch` independent uniform Brownian trees, shape
    (batch, n, d), rooted at the origin.

    Vectorized forward construction: at step k a uniformly chosen live
    lineage duplicates. Creation order is not exchangeable, so each row
    gets an independent uniform mark permutation at the end.
    """
    if n == 1:
        return np.sqrt(t) * rng.standard_normal((batch, 1, d))
    X = np.zeros((batch, n, d))
    times = np.sort(rng.random((batch, n - 1)) * t, axis=1)
    prev = np.zeros(batch)
    rows = np.arange(batch)
    for k in range(1, n):
        dt = times[:, k - 1] - prev
        X[:, :k, :] += rng.standard_normal((batch, k, d)) * np.sqrt(dt)[:, None, None]
        chosen = rng.integers(0, k, size=batch)
        X[:, k, :] = X[rows, chosen, :]
        prev = times[:, k - 1]
    X += rng.standard_normal((batch, n, d)) * np.sqrt(t - prev)[:, None, None]
    perm = np.argsort(rng.random((batch, n)), axis=1)
    return X[rows[:, None], perm, :]


def silverman_bandwidth(n: int, d: int, t: float, reps: int) -> float:
    """Default product-kernel bandwidth 0.15 sqrt(t) reps^(-1/(nd+4))."""
    return 0.15 * np.sqrt(t) * reps ** (-1.0 / (n * d + 4))


def cluster_moment_density_mc(
    n: int,
    t: float,
    d: int,
    xs,
    reps: int,
    bandwidth: float | None = None,
    rng: np.random.Generator | None = None,
    batch: int = 200_000,
) -> EstimateWithError:
    """Kernel-smoothed Monte Carlo estimate of the order-n cluster moment
    density q_t^n at the tuple `xs`.

    The estimate is n! t^(n-1) times the leaf density of the uniform
    Brownian tree, smoothed with a product Gaussian kernel. `bias`
    reports the shift when the bandwidth is halved; acceptance checks use
    stderr + bias as the combined uncertainty. Estimates exceeding twice
    the provable envelope raise, since that indicates a broken sampler
    rather than noise.
    """
    if rng is None:
        raise ValidationError("an explicit generator is required")
    if reps < 1000:
        raise ValidationError("need at least 1000 replicates")
    xs = as_point_tuple(xs, d)
    if xs.shape[0] != n:
        raise ValidationError("tuple order does not match n")
    if not diagonal_distance(xs) > 0.0:
        raise DiagonalError("evaluation tuple lies on the diagonal")
    if bandwidth is None:
        bandwidth = silverman_bandwidth(n, d, t, reps)
    if bandwidth <= 0.0:
        raise ValidationError("bandwidth must be positive")

    scale = math.factorial(n) * t ** (n - 1)
    norm_h = (2.0 * np.pi * bandwidth**2) ** (-n * d / 2.0)
    norm_h2 = (2.0 * np.pi * (bandwidth / 2.0) ** 2) ** (-n * d / 2.0)
    acc_h = RunningMoments()
    acc_h2 = RunningMoments()
    remaining = reps
    while remaining > 0:
        b = min(batch, remaining)
        leaves = sample_leaf_batch(n, t, d, b, rng)
        sq = np.sum(np.square(leaves - xs[None, :, :]), axis=(1, 2))
        acc_h.update(norm_h * np.exp(-sq / (2.0 * bandwidth**2)))
        acc_h2.update(norm_h2 * np.exp(-sq / (2.0 * (bandwidth / 2.0) ** 2)))
        remaining -= b

    value = scale * acc_h.mean
    stderr = scale * acc_h.stderr
    bias = abs(value - scale * acc_h2.mean)
    envelope = cluster_density_envelope(xs, t)
    if value > 2.0 * envelope + 6.0 * stderr:
        raise AssertionError(
            f"density estimate {value:.3g} breaks the domination envelope {envelope:.3g}"
        )
    return EstimateWithError(
        value=value,
        stderr=stderr,
        reps=reps,
        method="monte_carlo",
        bias=bias,
        details={"bandwidth": bandwidth, "half_bandwidth_value": scale * acc_h2.mean},
    )
