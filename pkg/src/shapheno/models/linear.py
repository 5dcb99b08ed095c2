"""L2-regularised logistic regression fit by full-batch gradient descent."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..syncohort import Cohort
from .gbm import sigmoid


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray
    feature_names: list[str]

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _standardize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"model expects {self.n_features} features, got {X.shape[1]}")
        return (X - self.mean) / self.scale

    def decision_function(self, X) -> np.ndarray:
        return self._standardize(X) @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.decision_function(X))


def train_logreg(cohort: Cohort, epochs: int = 2000, step: float = 0.5, l2: float = 1e-4) -> LinearModel:
    """Gradient descent on mean log loss plus ``l2/2 * |w|^2`` (bias unpenalised).

    Features are standardised with training means and standard deviations;
    constant columns get unit scale.
    """
    X = np.asarray(cohort.features, dtype=float)
    y = np.asarray(cohort.labels, dtype=float)
    if np.unique(y).size < 2:
        raise ValueError("labels must contain both classes")
    if not np.isfinite(X).all():
        raise ValueError("logistic regression needs finite features; impute first")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    Z = (X - mean) / scale
    n, d = Z.shape
    w = np.zeros(d)
    b = 0.0
    for _ in range(epochs):
        r = sigmoid(Z @ w + b) - y
        w -= step * (Z.T @ r / n + l2 * w)
        b -= step * r.mean()
    if not (np.isfinite(w).all() and np.isfinite(b)):
        raise FloatingPointError("logistic regression diverged; reduce the step size")
    return LinearModel(w, float(b), mean, scale, list(cohort.feature_names))
