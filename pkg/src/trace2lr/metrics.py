"""Evaluation metrics for likelihood-ratio systems.

All llrs handled here are natural-log likelihood ratios. Labels are 1 for
H1-true and 0 for H2-true samples. Conversion to/from log10 for reporting is
done with :func:`to_log10` / :func:`from_log10`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

LN2 = np.log(2.0)
LN10 = np.log(10.0)


def to_log10(llrs):
    return np.asarray(llrs, dtype=float) / LN10


def from_log10(log10_lrs):
    return np.asarray(log10_lrs, dtype=float) * LN10


@dataclass
class BinaryEvalSet:
    llrs: np.ndarray
    labels: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.llrs = np.asarray(self.llrs, dtype=float)
        self.labels = np.asarray(self.labels).astype(int)
        if self.llrs.shape != self.labels.shape or self.llrs.ndim != 1:
            raise ValueError("llrs and labels must be 1-d arrays of equal length")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 (H2) or 1 (H1)")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != self.llrs.shape:
                raise ValueError("weights must align with llrs")

    def _w(self) -> np.ndarray:
        return np.ones_like(self.llrs) if self.weights is None else self.weights

    def counts(self) -> tuple[float, float]:
        w = self._w()
        return float(w[self.labels == 1].sum()), float(w[self.labels == 0].sum())

    def take(self, idx) -> "BinaryEvalSet":
        w = None if self.weights is None else self.weights[idx]
        return BinaryEvalSet(self.llrs[idx], self.labels[idx], w)


@dataclass
class MulticlassEvalSet:
    loglik: np.ndarray
    labels: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.loglik = np.asarray(self.loglik, dtype=float)
        self.labels = np.asarray(self.labels).astype(int)
        if self.loglik.ndim != 2 or self.loglik.shape[0] != self.labels.shape[0]:
            raise ValueError("loglik must be a T x K matrix aligned with labels")
        k = self.loglik.shape[1]
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= k):
            raise ValueError("labels must lie in [0, K)")
        if not np.isfinite(self.loglik).all():
            raise ValueError("loglik entries must be finite")


@dataclass
class CllrReport:
    cllr: float
    cllr_min: float
    cllr_cal: float

    def to_json(self) -> dict:
        return {"cllr": self.cllr, "cllr_min": self.cllr_min, "cllr_cal": self.cllr_cal}


@dataclass
class CurveData:
    """Curve points. ``x`` is shared by every entry of ``series``.

    pav: x = system log10 LR, series["pav"] = PAV-optimal log10 LR.
    tippett: x = log10 LR threshold, series["H1"/"H2"] = fraction >= x.
    ece: x = prior log10 odds, series["ece"], ["reference"], ["calibrated"].
    """

    kind: str
    x: np.ndarray
    series: dict[str, np.ndarray] = field(default_factory=dict)

    def rows(self):
        names = list(self.series)
        for i, xv in enumerate(self.x):
            yield [float(xv)] + [float(self.series[n][i]) for n in names]

    def header(self) -> list[str]:
        return ["x"] + list(self.series)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "x": [float(v) for v in self.x],
            "series": {k: [float(v) for v in s] for k, s in self.series.items()},
        }


def _softplus_bits(x):
    """log2(1 + exp(x)), stable for large |x| and for +-inf."""
    return np.logaddexp(0.0, x) / LN2


def cllr(data: BinaryEvalSet) -> float:
    n1, n2 = data.counts()
    if n1 <= 0 or n2 <= 0:
        raise ValueError("cllr needs at least one sample of each hypothesis")
    w = data._w()
    h1 = data.labels == 1
    c1 = np.sum(w[h1] * _softplus_bits(-data.llrs[h1])) / n1
    c2 = np.sum(w[~h1] * _softplus_bits(data.llrs[~h1])) / n2
    return float(0.5 * (c1 + c2))


def pav(y, scores, weights=None) -> np.ndarray:
    """Weighted isotonic (nondecreasing) regression of ``y`` on ``scores``.

    Tied scores are pooled up front so the fit is a function of the score.
    Returns fitted values aligned with the input order.
    """
    y = np.asarray(y, dtype=float)
    scores = np.asarray(scores, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if y.shape != scores.shape or w.shape != y.shape:
        raise ValueError("y, scores and weights must have equal shapes")
    if y.size == 0:
        return y.copy()
    order = np.argsort(scores, kind="mergesort")
    s_sorted = scores[order]
    # one initial block per distinct score
    starts = np.flatnonzero(np.r_[True, s_sorted[1:] != s_sorted[:-1]])
    block_w = np.add.reduceat(w[order], starts)
    block_wy = np.add.reduceat((w * y)[order], starts)

    # stack of pools: weighted sum, weight, number of initial blocks
    sums, weights_, sizes = [], [], []
    for wy, bw in zip(block_wy.tolist(), block_w.tolist()):
        sums.append(wy)
        weights_.append(bw)
        sizes.append(1)
        while len(sums) > 1 and sums[-2] * weights_[-1] >= sums[-1] * weights_[-2]:
            # previous mean >= current mean: pool
            s, ww, n = sums.pop(), weights_.pop(), sizes.pop()
            sums[-1] += s
            weights_[-1] += ww
            sizes[-1] += n
    means = np.array(sums) / np.array(weights_)
    block_fit = np.repeat(means, sizes)
    lengths = np.diff(np.r_[starts, len(y)])
    fitted_sorted = np.repeat(block_fit, lengths)
    out = np.empty_like(y)
    out[order] = fitted_sorted
    return out


def _pav_pool_counts(labels, scores, weights):
    """Per-sample (H1 weight, total weight) of the PAV pool it ends up in."""
    fitted = pav(labels, scores, weights)
    # pools are maximal runs of equal fitted value along the score order
    order = np.argsort(scores, kind="mergesort")
    f_sorted = fitted[order]
    starts = np.flatnonzero(np.r_[True, f_sorted[1:] != f_sorted[:-1]])
    w_sorted = weights[order]
    tot = np.add.reduceat(w_sorted, starts)
    pos = np.add.reduceat(w_sorted * labels[order], starts)
    lengths = np.diff(np.r_[starts, len(order)])
    k = np.empty_like(fitted)
    n = np.empty_like(fitted)
    k[order] = np.repeat(pos, lengths)
    n[order] = np.repeat(tot, lengths)
    return fitted, k, n


def pav_llrs(data: BinaryEvalSet, scores=None, smooth: bool = True) -> np.ndarray:
    """PAV-optimal llrs for ``scores`` (defaults to the set's own llrs).

    Pooled posteriors are turned into llrs relative to the evaluation-set
    prior odds. With ``smooth`` a pool whose posterior is exactly 0 or 1 is
    replaced by (k + 0.5) / (n + 1), kept on the right side of its
    neighbours, so the result is finite and still monotone; without it such
    pools map to -inf / +inf, which :func:`cllr` scores exactly.
    """
    scores = data.llrs if scores is None else np.asarray(scores, dtype=float)
    if scores.shape != data.llrs.shape:
        raise ValueError("scores must align with the evaluation set")
    n1, n2 = data.counts()
    if n1 <= 0 or n2 <= 0:
        raise ValueError("PAV llrs need samples of both hypotheses")
    w = data._w()
    p, k, n = _pav_pool_counts(data.labels.astype(float), scores, w)
    if smooth:
        # the shrunk edge pools must not cross their interior neighbours
        inner = p[(p > 0) & (p < 1)]
        lo = inner.min() if inner.size else 0.5
        hi = inner.max() if inner.size else 0.5
        p = np.where(p <= 0, np.minimum(0.5 / (n + 1.0), lo), p)
        p = np.where(p >= 1, np.maximum((k + 0.5) / (n + 1.0), hi), p)
    with np.errstate(divide="ignore"):
        logit = np.log(p) - np.log1p(-p)
    return logit - np.log(n1 / n2)


def cllr_decompose(data: BinaryEvalSet, scores=None) -> CllrReport:
    total = cllr(data)
    optimal = BinaryEvalSet(pav_llrs(data, scores, smooth=False), data.labels, data.weights)
    c_min = cllr(optimal)
    cal = total - c_min
    if cal < -1e-12:
        raise ArithmeticError(f"cllr_min {c_min} exceeds cllr {total}")
    return CllrReport(total, c_min, max(cal, 0.0))


def cmxe(data: MulticlassEvalSet) -> tuple[float, float]:
    """Multiclass cross-entropy cost in bits and its value divided by log2 K."""
    t, k = data.loglik.shape
    w = np.ones(t) if data.weights is None else np.asarray(data.weights, dtype=float)
    per_sample = (logsumexp(data.loglik, axis=1) - data.loglik[np.arange(t), data.labels]) / LN2
    total = 0.0
    for c in range(k):
        mask = data.labels == c
        wc = w[mask].sum()
        if wc <= 0:
            raise ValueError(f"class {c} has no samples")
        total += np.sum(w[mask] * per_sample[mask]) / wc
    value = total / k
    return float(value), float(value / np.log2(k))


def tippett_curve(data: BinaryEvalSet) -> CurveData:
    if data.llrs.size == 0:
        raise ValueError("empty evaluation set")
    x = to_log10(data.llrs)
    grid = np.unique(x)
    span = grid[-1] - grid[0]
    pad = 0.01 * span if span > 0 else 0.01
    grid = np.r_[grid[0] - pad, grid, grid[-1] + pad]
    series = {}
    for name, lab in (("H1", 1), ("H2", 0)):
        vals = np.sort(x[data.labels == lab])
        if vals.size:
            series[name] = 1.0 - np.searchsorted(vals, grid, side="left") / vals.size
        else:
            series[name] = np.full(grid.shape, np.nan)
    return CurveData("tippett", grid, series)


def ece_values(data: BinaryEvalSet, prior_logodds) -> np.ndarray:
    """ECE in bits at natural-log prior odds ``prior_logodds``."""
    n1, n2 = data.counts()
    if n1 <= 0 or n2 <= 0:
        raise ValueError("ECE needs samples of both hypotheses")
    w = data._w()
    h1 = data.labels == 1
    pi = np.asarray(prior_logodds, dtype=float)[:, None]
    p1 = expit(pi[:, 0])
    e1 = (_softplus_bits(-data.llrs[h1][None, :] - pi) * w[h1]).sum(axis=1) / n1
    e2 = (_softplus_bits(data.llrs[~h1][None, :] + pi) * w[~h1]).sum(axis=1) / n2
    return p1 * e1 + (1.0 - p1) * e2


def default_ece_grid() -> np.ndarray:
    return np.linspace(-3.0, 3.0, 61)


def ece_curve(data: BinaryEvalSet, prior_log10_odds=None, with_calibrated: bool = True) -> CurveData:
    grid = default_ece_grid() if prior_log10_odds is None else np.asarray(prior_log10_odds, dtype=float)
    pi = from_log10(grid)
    series = {
        "ece": ece_values(data, pi),
        "reference": ece_values(BinaryEvalSet(np.zeros_like(data.llrs), data.labels, data.weights), pi),
    }
    if with_calibrated:
        opt = BinaryEvalSet(pav_llrs(data, smooth=False), data.labels, data.weights)
        series["calibrated"] = ece_values(opt, pi)
    return CurveData("ece", grid, series)


def pav_curve(data: BinaryEvalSet) -> CurveData:
    x = to_log10(data.llrs)
    y = to_log10(pav_llrs(data, smooth=True))
    order = np.argsort(x, kind="mergesort")
    return CurveData("pav", x[order], {"pav": y[order]})


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels must have equal length")
    if predictions.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(predictions == labels))
