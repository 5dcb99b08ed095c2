"""Stratified k-fold cross-validation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..syncohort import Cohort
from .metrics import auprc, auroc


class FoldDegeneracyError(ValueError):
    pass


@dataclass
class EvalReport:
    auroc_mean: float
    auroc_std: float
    auprc_mean: float
    auprc_std: float
    per_fold: list[dict]
    folds: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "auroc": {"mean": self.auroc_mean, "std": self.auroc_std},
            "auprc": {"mean": self.auprc_mean, "std": self.auprc_std},
            "per_fold": self.per_fold,
        }


def stratified_folds(labels, k: int, seed: int = 0) -> np.ndarray:
    """Fold id per row.  Each class is shuffled, then rows are dealt round-robin."""
    y = np.asarray(labels)
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > y.size:
        raise ValueError(f"k={k} exceeds the number of samples ({y.size})")
    rng = np.random.default_rng(seed)
    folds = np.empty(y.size, dtype=int)
    dealt = 0
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = (dealt + np.arange(idx.size)) % k
        dealt += idx.size
    return folds


def kfold_cv(
    cohort: Cohort,
    k: int,
    trainer: Callable[[Cohort], object],
    seed: int = 0,
    folds: np.ndarray | None = None,
    oof: np.ndarray | None = None,
) -> EvalReport:
    """Train on k-1 folds, score the held-out fold, repeat.

    ``trainer`` maps a training :class:`Cohort` to an object with
    ``predict_proba``.  Pass ``folds`` to reuse an existing partition, and an
    ``oof`` array to collect out-of-fold probabilities.
    """
    if folds is None:
        folds = stratified_folds(cohort.labels, k, seed)
    y = cohort.labels
    per_fold = []
    for f in range(k):
        test = folds == f
        for part, mask in (("training", ~test), ("test", test)):
            if np.unique(y[mask]).size < 2:
                raise FoldDegeneracyError(f"fold {f}: {part} split lacks one of the classes")
        model = trainer(cohort.subset(np.flatnonzero(~test)))
        p = model.predict_proba(cohort.features[test])
        if oof is not None:
            oof[test] = p
        per_fold.append({
            "fold": f,
            "n_test": int(test.sum()),
            "auroc": auroc(p, y[test]),
            "auprc": auprc(p, y[test]),
        })
    a = np.array([r["auroc"] for r in per_fold])
    b = np.array([r["auprc"] for r in per_fold])
    return EvalReport(float(a.mean()), float(a.std()), float(b.mean()), float(b.std()), per_fold, folds)
