from .encoding import encode_ordered_categorical
from .ensemble import (
    FAMILIES,
    ClassWeights,
    ScorerConfig,
    ScorerError,
    TreeEnsembleModel,
    binary_margin,
    compute_class_weights,
    fit_scorer,
    predict_classes,
    score,
    score_frame,
)
from .importance import ImportanceReport, aggregate_importance, split_importance, variable_importance
from .tree import Binner, Tree, grow_tree

__all__ = [
    "FAMILIES", "Binner", "ClassWeights", "ImportanceReport", "ScorerConfig", "ScorerError",
    "Tree", "TreeEnsembleModel", "aggregate_importance", "binary_margin", "compute_class_weights",
    "encode_ordered_categorical", "fit_scorer", "grow_tree", "predict_classes", "score",
    "score_frame", "split_importance", "variable_importance",
]
