"""Score calibration and likelihood-ratio conversion.

Calibrators map a scalar score to the posterior probability that H1 is true,
under the class proportions of the calibration data. That posterior is
converted to an LR by dividing the posterior odds by the training prior odds,
then clamped to the ELUB bounds.

The ELUB bounds used here are a conservative surrogate: the log10 range of the
raw training LRs, capped at log10(n + 1) on each side. They are flagged with
``surrogate=True`` in every serialised system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import expit, log_expit, logsumexp

POSTERIOR_CLAMP = 1e-9
SLOPE_CAP = 50.0
L2_PENALTY = 1e-6


class CalibrationError(ValueError):
    pass


def _split(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape:
        raise CalibrationError("scores and labels must align")
    if not np.isfinite(scores).all():
        raise CalibrationError("scores must be finite")
    return scores[labels == 1], scores[labels == 0]


@dataclass
class LogisticCalibrator:
    """c(s) = 1 / (1 + exp(-w (s - m))), stored as slope and intercept so the
    flat case w = 0 (posterior equal to the training proportion) is
    representable."""

    slope: float
    intercept: float

    kind = "logistic"

    @property
    def w(self) -> float:
        return self.slope

    @property
    def m(self) -> float:
        if self.slope == 0:
            return math.copysign(math.inf, -self.intercept) if self.intercept else 0.0
        return -self.intercept / self.slope

    def log_odds(self, scores) -> np.ndarray:
        return self.intercept + self.slope * np.asarray(scores, dtype=float)

    def posterior(self, scores) -> np.ndarray:
        return expit(self.log_odds(scores))

    def to_json(self) -> dict:
        return {"kind": self.kind, "w": self.slope, "m": self.m, "intercept": self.intercept}


def _logistic_objective(a, b, s, y, w):
    z = a + b * s
    return -np.sum(w * (y * log_expit(z) + (1 - y) * log_expit(-z))) + 0.5 * L2_PENALTY * b * b


def _newton_intercept(b, s, y, w, a0=0.0, max_iter=1000, tol=1e-8):
    a = a0
    for _ in range(max_iter):
        p = expit(a + b * s)
        g = np.sum(w * (p - y))
        h = np.sum(w * p * (1 - p))
        if abs(g) < tol or h <= 0:
            break
        step = g / h
        # backtracking keeps the objective non-increasing
        f0 = _logistic_objective(a, b, s, y, w)
        t = 1.0
        while t > 1e-10 and _logistic_objective(a - t * step, b, s, y, w) > f0 + 1e-15:
            t *= 0.5
        a -= t * step
    return a


def fit_logistic(scores, labels, weights=None, max_iter: int = 1000, tol: float = 1e-8) -> LogisticCalibrator:
    """Weighted maximum-likelihood logistic calibration.

    Damped Newton on (intercept, slope) with a tiny L2 penalty on the slope.
    The slope is constrained to [0, SLOPE_CAP]; because the log-likelihood is
    concave, an unconstrained optimum outside that range puts the constrained
    optimum on the boundary, where only the intercept is re-optimised.
    """
    s1, s2 = _split(scores, labels)
    if s1.size == 0 or s2.size == 0:
        raise CalibrationError("logistic calibration needs both hypotheses")
    s = np.asarray(scores, dtype=float)
    y = (np.asarray(labels).astype(int) == 1).astype(float)
    w = np.ones_like(s) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != s.shape or (w <= 0).any():
        raise CalibrationError("weights must be positive and align with scores")

    prior = np.sum(w * y) / np.sum(w)
    a, b = math.log(prior / (1 - prior)), 0.0
    for _ in range(max_iter):
        z = a + b * s
        p = expit(z)
        r = w * (p - y)
        g = np.array([r.sum(), np.dot(r, s) + L2_PENALTY * b])
        if np.max(np.abs(g)) < tol:
            break
        v = w * p * (1 - p)
        H = np.array([[v.sum(), np.dot(v, s)], [np.dot(v, s), np.dot(v, s * s) + L2_PENALTY]])
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = g / max(np.trace(H), 1e-12)
        f0 = _logistic_objective(a, b, s, y, w)
        t = 1.0
        while t > 1e-10:
            na, nb = a - t * step[0], b - t * step[1]
            if _logistic_objective(na, nb, s, y, w) <= f0 + 1e-15:
                break
            t *= 0.5
        a, b = na, nb
    if b < 0 or b > SLOPE_CAP:
        b = min(max(b, 0.0), SLOPE_CAP)
        a = _newton_intercept(b, s, y, w, a0=math.log(prior / (1 - prior)) - b * np.average(s, weights=w))
    return LogisticCalibrator(float(b), float(a))


def _norm_logpdf(x, mu, sigma):
    return -0.5 * ((x - mu) / sigma) ** 2 - math.log(sigma) - 0.5 * math.log(2 * math.pi)


@dataclass
class GaussianCalibrator:
    mu1: float
    sigma1: float
    mu2: float
    sigma2: float
    n1: int
    n2: int

    kind = "gaussian"

    def log_odds(self, scores) -> np.ndarray:
        s = np.asarray(scores, dtype=float)
        return (_norm_logpdf(s, self.mu1, self.sigma1) + math.log(self.n1)
                - _norm_logpdf(s, self.mu2, self.sigma2) - math.log(self.n2))

    def posterior(self, scores) -> np.ndarray:
        return expit(self.log_odds(scores))

    def to_json(self) -> dict:
        return {"kind": self.kind, "mu1": self.mu1, "sigma1": self.sigma1,
                "mu2": self.mu2, "sigma2": self.sigma2, "n1": self.n1, "n2": self.n2}


def fit_gaussian(scores, labels) -> GaussianCalibrator:
    s1, s2 = _split(scores, labels)
    if s1.size < 2 or s2.size < 2:
        raise CalibrationError("Gaussian calibration needs >= 2 samples per hypothesis")
    sd1, sd2 = np.std(s1, ddof=1), np.std(s2, ddof=1)
    if sd1 <= 0 or sd2 <= 0:
        raise CalibrationError("zero score variance in one hypothesis; use the logistic calibrator")
    return GaussianCalibrator(float(s1.mean()), float(sd1), float(s2.mean()), float(sd2), s1.size, s2.size)


def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=float)
    return 1.06 * float(np.std(x, ddof=1)) * x.size ** (-0.2)


@dataclass
class KdeCalibrator:
    scores1: np.ndarray
    scores2: np.ndarray
    bandwidth1: float
    bandwidth2: float

    kind = "kde"

    @staticmethod
    def _log_density(s, data, h):
        z = (s[:, None] - data[None, :]) / h
        return logsumexp(-0.5 * z * z, axis=1) - math.log(data.size * h * math.sqrt(2 * math.pi))

    def log_odds(self, scores) -> np.ndarray:
        s = np.atleast_1d(np.asarray(scores, dtype=float))
        out = (self._log_density(s, self.scores1, self.bandwidth1) + math.log(self.scores1.size)
               - self._log_density(s, self.scores2, self.bandwidth2) - math.log(self.scores2.size))
        return out.reshape(np.shape(scores))

    def posterior(self, scores) -> np.ndarray:
        return expit(self.log_odds(scores))

    def to_json(self) -> dict:
        return {"kind": self.kind, "scores1": self.scores1.tolist(), "scores2": self.scores2.tolist(),
                "bandwidth1": self.bandwidth1, "bandwidth2": self.bandwidth2}


def fit_kde(scores, labels) -> KdeCalibrator:
    s1, s2 = _split(scores, labels)
    if s1.size < 2 or s2.size < 2:
        raise CalibrationError("KDE calibration needs >= 2 samples per hypothesis")
    h1, h2 = silverman_bandwidth(s1), silverman_bandwidth(s2)
    if h1 <= 0 or h2 <= 0:
        raise CalibrationError("zero score variance in one hypothesis; use the logistic calibrator")
    return KdeCalibrator(s1.copy(), s2.copy(), h1, h2)


Calibrator = Union[LogisticCalibrator, GaussianCalibrator, KdeCalibrator]

CALIBRATORS = {"logistic": fit_logistic, "gaussian": fit_gaussian, "kde": fit_kde}


def fit_calibrator(kind: str, scores, labels, weights=None) -> Calibrator:
    try:
        fit = CALIBRATORS[kind]
    except KeyError:
        raise CalibrationError(f"unknown calibrator {kind!r}; choose from {sorted(CALIBRATORS)}") from None
    if kind == "logistic":
        return fit(scores, labels, weights)
    return fit(scores, labels)


def calibrator_from_json(data: dict) -> Calibrator:
    kind = data["kind"]
    if kind == "logistic":
        return LogisticCalibrator(data["w"], data["intercept"])
    if kind == "gaussian":
        return GaussianCalibrator(data["mu1"], data["sigma1"], data["mu2"], data["sigma2"], data["n1"], data["n2"])
    if kind == "kde":
        return KdeCalibrator(np.asarray(data["scores1"]), np.asarray(data["scores2"]),
                             data["bandwidth1"], data["bandwidth2"])
    raise CalibrationError(f"unknown calibrator kind {kind!r}")


@dataclass(frozen=True)
class PriorOdds:
    value: float
    n1: int
    n2: int


def prior_odds_from_counts(n1: int, n2: int) -> PriorOdds:
    if n1 < 1 or n2 < 1:
        raise CalibrationError(f"prior odds need both counts >= 1, got ({n1}, {n2})")
    return PriorOdds(n1 / n2, n1, n2)


def posterior_to_lr(p, prior: PriorOdds):
    p = np.clip(np.asarray(p, dtype=float), POSTERIOR_CLAMP, 1 - POSTERIOR_CLAMP)
    out = (p / (1 - p)) / prior.value
    return out if out.ndim else float(out)


def log10_lr_from_log_odds(log_odds, prior: PriorOdds):
    """Same conversion as :func:`posterior_to_lr` but in log space, in log10."""
    lim = math.log(POSTERIOR_CLAMP / (1 - POSTERIOR_CLAMP))
    z = np.clip(np.asarray(log_odds, dtype=float), lim, -lim)
    return (z - math.log(prior.value)) / math.log(10)


@dataclass(frozen=True)
class ElubBounds:
    lower_log10: float
    upper_log10: float
    surrogate: bool = True

    def __post_init__(self):
        if not self.lower_log10 <= 0 <= self.upper_log10:
            raise CalibrationError("ELUB bounds must straddle log10 LR = 0")


def elub_from_log10_lrs(log10_lrs, n1: int, n2: int) -> ElubBounds:
    x = np.asarray(log10_lrs, dtype=float)
    upper = min(float(x.max()), math.log10(n2 + 1))
    lower = max(float(x.min()), -math.log10(n1 + 1))
    return ElubBounds(min(lower, 0.0), max(upper, 0.0))


def compute_elub(training_scores, labels, calibrator: Calibrator, prior: PriorOdds) -> ElubBounds:
    labels = np.asarray(labels).astype(int)
    x = log10_lr_from_log_odds(calibrator.log_odds(training_scores), prior)
    return elub_from_log10_lrs(x, int((labels == 1).sum()), int((labels == 0).sum()))


def apply_bounds(lr, bounds: ElubBounds):
    lr = np.asarray(lr, dtype=float)
    if (lr <= 0).any():
        raise ValueError("LRs must be positive")
    out = 10.0 ** np.clip(np.log10(lr), bounds.lower_log10, bounds.upper_log10)
    return out if out.ndim else float(out)


def bound_log10(log10_lr, bounds: ElubBounds):
    return np.clip(np.asarray(log10_lr, dtype=float), bounds.lower_log10, bounds.upper_log10)
