"""Independent reference implementations used as test oracles.

Each oracle follows the textbook definition as literally as possible and
shares no code with the package.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


# ---------------------------------------------------------------- isotonic regression

@lru_cache(maxsize=None)
def _partitions(m: int) -> np.ndarray:
    """All contiguous partitions of m units as a (2**(m-1), m) block-id matrix."""
    rows = []
    for cuts in itertools.product((0, 1), repeat=max(m - 1, 0)):
        rows.append(np.r_[0, np.cumsum(cuts)])
    return np.array(rows, dtype=int)


def isotonic_exhaustive(y, x, w=None) -> np.ndarray:
    """Weighted least-squares nondecreasing fit of y on x by enumerating every
    step function whose steps sit between distinct x values."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    ux, unit = np.unique(x, return_inverse=True)
    m = ux.size
    uw = np.bincount(unit, weights=w, minlength=m)
    uwy = np.bincount(unit, weights=w * y, minlength=m)
    parts = _partitions(m)                                  # (P, m)
    onehot = parts[:, :, None] == np.arange(m)[None, None, :]   # (P, unit, block)
    bw = np.einsum("pub,u->pb", onehot, uw)
    bwy = np.einsum("pub,u->pb", onehot, uwy)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = bwy / bw
    n_blocks = parts[:, -1] + 1
    ok = np.ones(len(parts), dtype=bool)
    for p in range(len(parts)):
        mu = means[p, :n_blocks[p]]
        ok[p] = np.all(np.diff(mu) >= 0)
    fit_units = np.take_along_axis(means, parts, axis=1)       # (P, m)
    sse = (((y[None, :] - fit_units[:, unit]) ** 2) * w[None, :]).sum(axis=1)
    sse[~ok] = np.inf
    best = int(np.argmin(sse))
    return fit_units[best, unit]


def pool_boundaries(fitted, x) -> list[int]:
    """Positions (in ascending-x order) where the fitted step function jumps."""
    order = np.argsort(x, kind="mergesort")
    f = np.asarray(fitted)[order]
    return [i for i in range(1, len(f)) if abs(f[i] - f[i - 1]) > 1e-12]


# ---------------------------------------------------------------- Cllr family

def cllr_loop(llrs, labels) -> float:
    s1 = [l for l, y in zip(llrs, labels) if y == 1]
    s2 = [l for l, y in zip(llrs, labels) if y == 0]
    a = sum(math.log2(1 + math.exp(-l)) for l in s1) / len(s1)
    b = sum(math.log2(1 + math.exp(l)) for l in s2) / len(s2)
    return 0.5 * (a + b)


# ---------------------------------------------------------------- calibrators

def normal_pdf(x, mu, sigma):
    return math.exp(-0.5 * ((x - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))


def gaussian_posterior(s, h1, h2) -> float:
    m1, m2 = sum(h1) / len(h1), sum(h2) / len(h2)
    sd1 = math.sqrt(sum((v - m1) ** 2 for v in h1) / (len(h1) - 1))
    sd2 = math.sqrt(sum((v - m2) ** 2 for v in h2) / (len(h2) - 1))
    pi1 = len(h1) / (len(h1) + len(h2))
    a = normal_pdf(s, m1, sd1) * pi1
    b = normal_pdf(s, m2, sd2) * (1 - pi1)
    return a / (a + b)


def kde_posterior(s, h1, h2) -> float:
    def dens(vals):
        m = sum(vals) / len(vals)
        sd = math.sqrt(sum((v - m) ** 2 for v in vals) / (len(vals) - 1))
        h = 1.06 * sd * len(vals) ** (-0.2)
        return sum(normal_pdf(s, v, h) for v in vals) / len(vals)
    pi1 = len(h1) / (len(h1) + len(h2))
    a, b = dens(h1) * pi1, dens(h2) * (1 - pi1)
    return a / (a + b)


def logistic_grid(scores, labels, w_grid, m_grid):
    """Maximise the Bernoulli log-likelihood of 1/(1+exp(-w(s-m))) over a grid."""
    s = np.asarray(scores, dtype=float)[None, None, :]
    y = np.asarray(labels, dtype=float)[None, None, :]
    W = np.asarray(w_grid)[:, None, None]
    M = np.asarray(m_grid)[None, :, None]
    z = W * (s - M)
    ll = -(y * np.logaddexp(0, -z) + (1 - y) * np.logaddexp(0, z)).sum(axis=2)
    i, j = np.unravel_index(np.argmax(ll), ll.shape)
    return float(w_grid[i]), float(m_grid[j]), float(ll[i, j])


# ---------------------------------------------------------------- Wilcoxon

def wilcoxon_exhaustive(diffs):
    """(W+, one-sided 'greater' p) by enumerating every sign assignment of the
    nonzero differences' absolute ranks (midranks for ties)."""
    d = [v for v in diffs if v != 0]
    n = len(d)
    if n == 0:
        return 0.0, 1.0
    a = sorted(abs(v) for v in d)
    rank_of = {}
    i = 0
    while i < n:
        j = i
        while j + 1 < n and a[j + 1] == a[i]:
            j += 1
        rank_of[a[i]] = (i + j) / 2 + 1
        i = j + 1
    ranks = [rank_of[abs(v)] for v in d]
    w_plus = sum(r for r, v in zip(ranks, d) if v > 0)
    hits = 0
    for signs in itertools.product((0, 1), repeat=n):
        if sum(r for r, s in zip(ranks, signs) if s) >= w_plus - 1e-9:
            hits += 1
    return w_plus, hits / 2 ** n


# ---------------------------------------------------------------- misc

def mode_bruteforce(tokens):
    counts = {}
    for t in tokens:
        counts[t] = counts.get(t, 0) + 1
    best = max(counts.values())
    return min(t for t, c in counts.items() if c == best)
