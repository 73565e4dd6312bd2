"""Small statistics toolbox used by the test batteries and experiments.

Self-contained (Kolmogorov-Smirnov, chi-square, rank correlation) so the
simulation core carries no statistics-package dependency; only the
regularized incomplete gamma function is taken from scipy.special.
"""
from __future__ import annotations

import numpy as np
from scipy.special import gammaincc


def kolmogorov_sf(lam: float) -> float:
    """Survival function of the Kolmogorov distribution."""
    if lam <= 0.0:
        return 1.0
    k = np.arange(1, 101)
    terms = 2.0 * (-1.0) ** (k - 1) * np.exp(-2.0 * (k * lam) ** 2)
    return float(min(1.0, max(0.0, terms.sum())))


def ks_2sample(a, b) -> tuple[float, float]:
    """Two-sample KS statistic and asymptotic p-value."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    n1, n2 = a.size, b.size
    pooled = np.concatenate([a, b])
    cdf1 = np.searchsorted(a, pooled, side="right") / n1
    cdf2 = np.searchsorted(b, pooled, side="right") / n2
    d = float(np.max(np.abs(cdf1 - cdf2)))
    ne = n1 * n2 / (n1 + n2)
    lam = (np.sqrt(ne) + 0.12 + 0.11 / np.sqrt(ne)) * d
    return d, kolmogorov_sf(lam)


def ks_distance_weighted(a, wa, b, wb) -> float:
    """Sup distance between two weighted empirical CDFs."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    wa = np.asarray(wa, dtype=float)
    wb = np.asarray(wb, dtype=float)
    order_a = np.argsort(a)
    order_b = np.argsort(b)
    a, wa = a[order_a], wa[order_a]
    b, wb = b[order_b], wb[order_b]
    ca = np.cumsum(wa) / wa.sum()
    cb = np.cumsum(wb) / wb.sum()
    pooled = np.unique(np.concatenate([a, b]))
    fa = _step_eval(a, ca, pooled)
    fb = _step_eval(b, cb, pooled)
    return float(np.max(np.abs(fa - fb)))


def _step_eval(x, cdf, at):
    idx = np.searchsorted(x, at, side="right")
    out = np.zeros(at.size)
    nz = idx > 0
    out[nz] = cdf[idx[nz] - 1]
    return out


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    s = w.sum()
    if s <= 0:
        return 0.0
    return float(s**2 / np.sum(w**2))


def ks_error_bar(n1: float, n2: float, conf: float = 0.95) -> float:
    """Approximate sampling scale of a 2-sample KS distance."""
    c = {0.90: 1.224, 0.95: 1.358, 0.99: 1.628}.get(conf, 1.358)
    return float(c * np.sqrt(1.0 / n1 + 1.0 / n2))


def chi2_sf(stat: float, df: int) -> float:
    return float(gammaincc(df / 2.0, stat / 2.0))


def chi_square_gof(counts, probs=None) -> tuple[float, float]:
    """Goodness-of-fit chi-square against cell probabilities (uniform by
    default). Returns (statistic, p-value)."""
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    if probs is None:
        probs = np.full(counts.size, 1.0 / counts.size)
    expected = n * np.asarray(probs, dtype=float)
    stat = float(np.sum((counts - expected) ** 2 / expected))
    return stat, chi2_sf(stat, counts.size - 1)


def chi_square_2sample(counts1, counts2) -> tuple[float, float]:
    """Two-sample chi-square homogeneity test over shared cells."""
    c1 = np.asarray(counts1, dtype=float)
    c2 = np.asarray(counts2, dtype=float)
    n1, n2 = c1.sum(), c2.sum()
    pooled = (c1 + c2) / (n1 + n2)
    keep = pooled > 0
    e1, e2 = n1 * pooled[keep], n2 * pooled[keep]
    stat = float(np.sum((c1[keep] - e1) ** 2 / e1) + np.sum((c2[keep] - e2) ** 2 / e2))
    return stat, chi2_sf(stat, int(keep.sum()) - 1)


def _ranks(x) -> np.ndarray:
    """Average ranks, ties shared."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Spearman rank correlation (ties handled by average ranks)."""
    rx, ry = _ranks(x), _ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt(np.sum(rx**2) * np.sum(ry**2))
    if denom == 0.0:
        return 0.0
    return float(np.sum(rx * ry) / denom)


def copula_distance(x, y, grid: int = 10) -> float:
    """Sup distance between the empirical copula and independence."""
    n = len(x)
    if n == 0:
        return 0.0
    u = _ranks(x) / n
    v = _ranks(y) / n
    qs = np.linspace(0.1, 1.0, grid)
    worst = 0.0
    for a in qs:
        for b in qs:
            c = np.mean((u <= a) & (v <= b))
            worst = max(worst, abs(c - a * b))
    return float(worst)
