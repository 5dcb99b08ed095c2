"""Phenotype discovery by clustering personalized Shapley explanations.

Typical flow: :func:`~shapheno.syncohort.generate_cohort` (or a design
matrix from :mod:`shapheno.temporal`), :func:`~shapheno.models.train_gbm`,
:func:`~shapheno.shapley.build_shap_matrix`, then
:func:`~shapheno.phenoclust.ward_cluster` on the attributions.
"""

from .syncohort import Cohort, SyntheticConfig, generate_cohort
from .models import GbmModel, TrainConfig, train_gbm, kfold_cv, auroc, auprc
from .shapley import ShapMatrix, build_shap_matrix, tree_shap, global_importance
from .phenoclust import ward_cluster, cut_tree, correct_rate, compare_spaces
from .embed import Embedding2D, pca_project, tsne
from .pipeline import RunConfig, run_all, verify_outputs

__version__ = "0.1.0"

__all__ = [
    "Cohort", "SyntheticConfig", "generate_cohort", "GbmModel", "TrainConfig", "train_gbm",
    "kfold_cv", "auroc", "auprc", "ShapMatrix", "build_shap_matrix", "tree_shap",
    "global_importance", "ward_cluster", "cut_tree", "correct_rate", "compare_spaces",
    "Embedding2D", "pca_project", "tsne", "RunConfig", "run_all", "verify_outputs",
]
