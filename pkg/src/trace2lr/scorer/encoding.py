"""Ordered target statistics for categorical variables.

During training, row i (in a random permutation) is encoded from the targets
of same-token rows strictly earlier in the permutation, smoothed towards the
global target mean:

    enc_i = (sum_{j<i, tok_j = tok_i} y_j + prior * p0) / (#{j<i, tok_j = tok_i} + prior)

so a row never sees its own target. At inference every row uses the
statistics of the full training column. MISSING (``None``) is a token of its
own; tokens never seen in training are treated as MISSING.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _token_codes(column) -> tuple[np.ndarray, list]:
    tokens: dict = {}
    codes = np.empty(len(column), dtype=np.int64)
    for i, tok in enumerate(column):
        codes[i] = tokens.setdefault(tok, len(tokens))
    return codes, list(tokens)


def encode_ordered_categorical(column, targets, permutation, prior: float = 1.0, p0: float | None = None) -> np.ndarray:
    """Encoded values aligned with the original row order."""
    targets = np.asarray(targets, dtype=float)
    permutation = np.asarray(permutation)
    n = len(column)
    if targets.shape != (n,) or permutation.shape != (n,):
        raise ValueError("column, targets and permutation must have equal length")
    if n and not np.array_equal(np.sort(permutation), np.arange(n)):
        raise ValueError("permutation must be a bijection on row indices")
    if n == 0:
        return np.empty(0)
    if p0 is None:
        p0 = float(targets.mean())
    codes, _ = _token_codes(column)
    c = codes[permutation]
    t = targets[permutation]
    # group rows of the same token, keeping permutation order inside a group
    order = np.argsort(c, kind="stable")
    cs, ts = c[order], t[order]
    starts = np.r_[True, cs[1:] != cs[:-1]]
    group_start = np.maximum.accumulate(np.where(starts, np.arange(n), 0))
    csum = np.cumsum(ts)
    before_sum = csum - ts - np.where(group_start > 0, csum[group_start - 1], 0.0)
    before_cnt = np.arange(n) - group_start
    enc_sorted = (before_sum + prior * p0) / (before_cnt + prior)
    enc_perm = np.empty(n)
    enc_perm[order] = enc_sorted
    out = np.empty(n)
    out[permutation] = enc_perm
    return out


@dataclass
class TokenStats:
    """Full-column statistics for one (variable, target) pair."""

    tokens: list
    sums: np.ndarray
    counts: np.ndarray
    p0: float
    prior: float

    def transform(self, column) -> np.ndarray:
        index = {tok: i for i, tok in enumerate(self.tokens)}
        miss = index.get(None)
        out = np.empty(len(column))
        for i, tok in enumerate(column):
            j = index.get(tok, miss)
            if j is None:
                out[i] = self.p0
            else:
                out[i] = (self.sums[j] + self.prior * self.p0) / (self.counts[j] + self.prior)
        return out

    def to_json(self) -> dict:
        return {"tokens": self.tokens, "sums": self.sums.tolist(), "counts": self.counts.tolist(),
                "p0": self.p0, "prior": self.prior}

    @classmethod
    def from_json(cls, d: dict) -> "TokenStats":
        return cls(list(d["tokens"]), np.asarray(d["sums"], float), np.asarray(d["counts"], float),
                   d["p0"], d["prior"])


def token_stats(column, targets, prior: float = 1.0) -> TokenStats:
    targets = np.asarray(targets, dtype=float)
    codes, tokens = _token_codes(column)
    sums = np.bincount(codes, weights=targets, minlength=len(tokens))
    counts = np.bincount(codes, minlength=len(tokens)).astype(float)
    return TokenStats(tokens, sums, counts, float(targets.mean()), prior)
