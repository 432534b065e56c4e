"""Likelihood-ratio systems for activity evidence derived from smartphone traces."""

from .calibration import fit_calibrator, fit_gaussian, fit_kde, fit_logistic
from .ingest import LabeledDataset, MinuteSample, VariableSchema, read_dataset, write_dataset
from .lr import LrSystem, build_lr_system, evaluate_lr, multiclass_likelihoods
from .metrics import BinaryEvalSet, MulticlassEvalSet, cllr, cllr_decompose, cmxe, pav_llrs
from .scorer import ScorerConfig, TreeEnsembleModel, fit_scorer, score, variable_importance

__version__ = "0.1.0"

__all__ = [
    "BinaryEvalSet", "LabeledDataset", "LrSystem", "MinuteSample", "MulticlassEvalSet", "ScorerConfig",
    "TreeEnsembleModel", "VariableSchema", "build_lr_system", "cllr", "cllr_decompose", "cmxe",
    "evaluate_lr", "fit_calibrator", "fit_gaussian", "fit_kde", "fit_logistic", "fit_scorer",
    "multiclass_likelihoods", "pav_llrs", "read_dataset", "score", "variable_importance", "write_dataset",
]
