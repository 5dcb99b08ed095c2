"""How few features does the classifier need?

Ranks features by mean |SHAP| on the synthetic cohort, retrains on the top n
with the same fold partition, and lists the cross-validated metrics next to
the full model.

    python demos/03_minimized_models.py [--samples 3000] [--top 3,5,10,20]
"""

import argparse

from shapheno import SyntheticConfig, TrainConfig, build_shap_matrix, generate_cohort, train_gbm
from shapheno.models.validation import kfold_cv, stratified_folds
from shapheno.pipeline import minimized_model_study

ap = argparse.ArgumentParser()
ap.add_argument("--samples", type=int, default=3000)
ap.add_argument("--top", default="3,5,10,20")
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

cohort = generate_cohort(SyntheticConfig(n_samples=args.samples, seed=args.seed))
cfg = TrainConfig(seed=args.seed)
trainer = lambda c: train_gbm(c, cfg)
folds = stratified_folds(cohort.labels, 10, args.seed)
full = kfold_cv(cohort, 10, trainer, folds=folds)
shap = build_shap_matrix(trainer(cohort), cohort)

rows = minimized_model_study(cohort, shap, [int(n) for n in args.top.split(",")], trainer, folds, full=full)
print("  n   AUROC   AUPRC   features")
for r in rows:
    feats = "all" if r["full"] else " ".join(r["features"])
    print(f"{r['n']:>3}   {r['auroc']:.4f}  {r['auprc']:.4f}  {feats}")
