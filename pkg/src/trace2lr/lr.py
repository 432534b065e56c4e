"""LR systems: scorer + calibrator + prior odds + ELUB bounds."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .calibration import (
    Calibrator,
    ElubBounds,
    PriorOdds,
    bound_log10,
    calibrator_from_json,
    compute_elub,
    fit_calibrator,
    log10_lr_from_log_odds,
    prior_odds_from_counts,
)
from .ingest import Frame, LabeledDataset, MinuteSample
from .scorer import TreeEnsembleModel, score, score_frame
from .scorer.ensemble import _as_frame


@dataclass
class LrSystem:
    model: TreeEnsembleModel
    calibrator: Calibrator
    prior_odds: PriorOdds
    bounds: ElubBounds
    hypotheses: tuple[tuple[str, ...], tuple[str, ...]]

    def _index(self, labels):
        order = self.model.class_order
        return [order.index(c) for c in labels]

    def scores_from_raw(self, raw: np.ndarray) -> np.ndarray:
        """Scalar H1-vs-H2 score from per-class raw scores."""
        raw = np.atleast_2d(raw)
        h1, h2 = self._index(self.hypotheses[0]), self._index(self.hypotheses[1])
        return logsumexp(raw[:, h1], axis=1) - logsumexp(raw[:, h2], axis=1)

    def log10_lr_from_scores(self, s) -> np.ndarray:
        raw = log10_lr_from_log_odds(self.calibrator.log_odds(s), self.prior_odds)
        return bound_log10(raw, self.bounds)

    def log10_lr(self, data) -> np.ndarray:
        return self.log10_lr_from_scores(self.scores_from_raw(score_frame(self.model, data)))

    def to_json(self, model_ref: str | None = None) -> dict:
        out = {
            "format": "trace2lr.lr_system/1",
            "calibrator": self.calibrator.to_json(),
            "prior_odds": {"value": self.prior_odds.value, "n1": self.prior_odds.n1, "n2": self.prior_odds.n2},
            "bounds": {"lower_log10": self.bounds.lower_log10, "upper_log10": self.bounds.upper_log10,
                       "surrogate": self.bounds.surrogate},
            "hypotheses": {"H1": list(self.hypotheses[0]), "H2": list(self.hypotheses[1])},
        }
        if model_ref is None:
            out["model"] = self.model.to_json()
        else:
            out["model_ref"] = model_ref
        return out

    @classmethod
    def from_json(cls, d: dict, model: TreeEnsembleModel | None = None, base: Path | None = None) -> "LrSystem":
        if model is None:
            if "model" in d:
                model = TreeEnsembleModel.from_json(d["model"])
            else:
                ref = Path(d["model_ref"])
                if base is not None and not ref.is_absolute():
                    ref = base / ref
                model = TreeEnsembleModel.from_json(json.loads(ref.read_text()))
        p = d["prior_odds"]
        b = d["bounds"]
        return cls(
            model,
            calibrator_from_json(d["calibrator"]),
            PriorOdds(p["value"], p["n1"], p["n2"]),
            ElubBounds(b["lower_log10"], b["upper_log10"], b.get("surrogate", True)),
            (tuple(d["hypotheses"]["H1"]), tuple(d["hypotheses"]["H2"])),
        )


def hypothesis_labels(frame: Frame, h1: Sequence[str], h2: Sequence[str]) -> np.ndarray:
    """1 for H1 rows, 0 for H2 rows, -1 otherwise."""
    out = np.full(len(frame), -1)
    out[np.isin(frame.labels, list(h2))] = 0
    out[np.isin(frame.labels, list(h1))] = 1
    return out


def build_lr_system(
    model: TreeEnsembleModel,
    train,
    h1: Sequence[str],
    h2: Sequence[str],
    calibrator: str = "logistic",
    weighted_calibration: bool = False,
) -> LrSystem:
    """Calibrate ``model`` on its own training scores for H1 vs H2."""
    frame = _as_frame(train)
    y = hypothesis_labels(frame, h1, h2)
    keep = np.flatnonzero(y >= 0)
    frame, y = frame.take(keep), y[keep]
    n1, n2 = int((y == 1).sum()), int((y == 0).sum())
    prior = prior_odds_from_counts(n1, n2)
    system = LrSystem(model, None, prior, ElubBounds(0.0, 0.0), (tuple(h1), tuple(h2)))
    s = system.scores_from_raw(score_frame(model, frame))
    weights = None
    if weighted_calibration:
        weights = np.where(y == 1, len(y) / (2 * n1), len(y) / (2 * n2))
    system.calibrator = fit_calibrator(calibrator, s, y, weights)
    system.bounds = compute_elub(s, y, system.calibrator, prior)
    return system


def evaluate_lr(system: LrSystem, sample: MinuteSample) -> float:
    """Bounded LR for one sample."""
    s = system.scores_from_raw(score(system.model, sample)[None, :])
    return float(10.0 ** system.log10_lr_from_scores(s)[0])


def multiclass_likelihoods(model: TreeEnsembleModel, sample) -> np.ndarray:
    """Softmax of the raw scores: one likelihood per class in ``class_order``.

    Accepts a single MinuteSample (returns a K-vector) or a dataset/frame
    (returns an (n, K) matrix).
    """
    if isinstance(sample, MinuteSample):
        return softmax(score(model, sample))
    if isinstance(sample, (Frame, LabeledDataset)):
        return softmax(score_frame(model, sample), axis=1)
    return softmax(np.asarray(sample, dtype=float), axis=-1)
