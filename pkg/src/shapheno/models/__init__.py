from .gbm import GbmModel, RegressionTree, TrainConfig, log_loss, sigmoid, train_gbm
from .linear import LinearModel, train_logreg
from .metrics import auprc, auroc
from .validation import EvalReport, FoldDegeneracyError, kfold_cv, stratified_folds


def predict_proba(model, x):
    """Probability for one feature vector (float) or a matrix (array)."""
    import numpy as np

    x = np.asarray(x, dtype=float)
    p = model.predict_proba(x)
    return float(p[0]) if x.ndim == 1 else p


__all__ = [
    "GbmModel", "RegressionTree", "TrainConfig", "train_gbm", "sigmoid", "log_loss",
    "LinearModel", "train_logreg", "auroc", "auprc", "EvalReport", "FoldDegeneracyError",
    "kfold_cv", "stratified_folds", "predict_proba",
]
