"""Command-line interface.

Every subcommand accepts ``--config`` (a RunConfig JSON document), ``--seed``
and ``--out``; command-line flags override the config file.  Single-step
commands read and write the same CSV/JSON formats that ``run-all`` emits,
so the steps can be chained by hand.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import dataio
from .models.validation import kfold_cv, stratified_folds
from .phenoclust import correct_rate, cut_tree, ward_cluster, zscore
from .pipeline import (
    RunConfig, _Artifacts, _append_folds, _embed, _embedding_rows, importance_table,
    minimized_model_study, run_all, stage_design, stratify_risk, verify_outputs,
)
from .shapley import build_shap_matrix
from .syncohort import generate_cohort, generate_trajectories
from .temporal import impute_column_means, parse_stage, preprocess


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    over = {"seed": args.seed, "output_dir": args.out}
    if getattr(args, "k", None):
        over["cluster_k"] = args.k
    if getattr(args, "top_n", None):
        over["top_n"] = args.top_n
    return cfg.with_overrides(**over)


def _stage_name(args) -> str:
    stage = args.stage or "pre"
    if args.cumulative and not stage.endswith("+"):
        stage += "+"
    parse_stage(stage)
    return stage


def cmd_generate(args, cfg: RunConfig, art: _Artifacts):
    if args.kind == "cohort":
        art.csv("cohort.csv", dataio.write_cohort_csv, generate_cohort(cfg.synthetic_config()))
    else:
        traj = generate_trajectories(**{"seed": int(cfg.seed), **cfg.fixture})
        paths = dataio.write_trajectories(traj, art.out, provenance=art.hash)
        for p in paths:
            art.done(p)


def cmd_preprocess(args, cfg, art):
    traj = dataio.read_trajectories(args.input)
    names, statics = ([], None)
    if cfg.statics_csv:
        names, statics = dataio.read_statics_csv(cfg.statics_csv)
    pp = cfg.preprocess
    traj = preprocess(traj, float(pp.get("iqr_k", 1.5)), float(pp.get("missing_threshold", 0.20)))
    stages = [_stage_name(args)] if args.stage else list(cfg.stages)
    for label in stages:
        c = stage_design(traj, label, names, statics)
        art.csv(f"design_{label.replace('+', '_cum')}.csv", dataio.write_cohort_csv, c)


def cmd_train(args, cfg, art):
    cohort = dataio.read_cohort_csv(args.input)
    art.done(dataio.save_model(cfg.trainer()(cohort), art.path("model.json"), provenance=art.hash))


def cmd_evaluate(args, cfg, art):
    cohort = dataio.read_cohort_csv(args.input)
    folds = stratified_folds(cohort.labels, cfg.cv_folds, int(cfg.seed))
    _append_folds(art, "folds.csv", folds)
    rep = kfold_cv(cohort, cfg.cv_folds, cfg.trainer(), folds=folds)
    art.json("cv.json", rep)
    print(f"AUROC {rep.auroc_mean:.4f} +- {rep.auroc_std:.4f}  AUPRC {rep.auprc_mean:.4f} +- {rep.auprc_std:.4f}")


def cmd_explain(args, cfg, art):
    cohort = dataio.read_cohort_csv(args.input)
    model = dataio.load_model(args.model)
    shap = build_shap_matrix(model, cohort)
    art.csv("shap.csv", dataio.write_shap_csv, shap)
    art.json("importance.json", importance_table(shap, cohort, cfg.shap.get("top_features")))


def cmd_cluster(args, cfg, art):
    cohort = dataio.read_cohort_csv(args.input) if args.input else None
    if args.shap:
        space, X = "shap", dataio.read_shap_csv(args.shap).values
    elif cohort is not None:
        space, X = "raw", zscore(cohort.features)
    else:
        raise SystemExit("cluster needs --shap or --input")
    tree = ward_cluster(X)
    art.csv(f"dendrogram_{space}.csv", dataio.write_dendrogram_csv, tree)
    reports = []
    for k in cfg.cluster_k:
        a = cut_tree(tree, int(k))
        art.csv(f"assign_{space}_k{k}.csv", dataio.write_assignment_csv, a)
        if cohort is not None and cohort.phenotype is not None:
            reports.append(correct_rate(a, cohort.phenotype).to_dict())
    if reports:
        art.json(f"correct_rate_{space}.json", {"space": space, "reports": reports})
        for r in reports:
            print(f"K={r['k']}  correct rate {r['overall']:.4f}")


def cmd_embed(args, cfg, art):
    if args.shap:
        space, X = "shap", dataio.read_shap_csv(args.shap).values
        pheno = dataio.read_cohort_csv(args.input).phenotype if args.input else None
    else:
        cohort = dataio.read_cohort_csv(args.input)
        space, X, pheno = "raw", zscore(cohort.features), cohort.phenotype
    rows = _embedding_rows(X.shape[0], cfg)
    _embed(art, cfg, space, X[rows], None, None if pheno is None else pheno[rows], rows)


def cmd_stratify(args, cfg, art):
    traj = dataio.read_trajectories(args.input)
    names, statics = ([], None)
    if cfg.statics_csv:
        names, statics = dataio.read_statics_csv(cfg.statics_csv)
    pp = cfg.preprocess
    traj = preprocess(traj, float(pp.get("iqr_k", 1.5)), float(pp.get("missing_threshold", 0.20)))
    trainer = cfg.trainer()
    models, cohorts = {}, {}
    for label in ("pre+", "intra+", "post+"):
        c = stage_design(traj, label, names, statics)
        c.features = impute_column_means(c.features)
        models[label], cohorts[label] = trainer(c), c
    bands = stratify_risk(models, cohorts)
    art.json("risk_bands.json", bands)
    for s, row in bands["stages"].items():
        print(s, row["counts"], f"risk ratio (high) {row['risk_ratio_high']:.3f}")


def cmd_minimize(args, cfg, art):
    cohort = dataio.read_cohort_csv(args.input)
    shap = dataio.read_shap_csv(args.shap)
    folds = stratified_folds(cohort.labels, cfg.cv_folds, int(cfg.seed))
    _append_folds(art, "folds.csv", folds)
    rows = minimized_model_study(cohort, shap, [int(n) for n in cfg.top_n], cfg.trainer(), folds)
    art.json("minimized.json", {"rows": rows})
    for r in rows:
        print(f"n={r['n']:>3}  AUROC {r['auroc']:.4f}  AUPRC {r['auprc']:.4f}")


def cmd_run_all(args, cfg, art):
    report = run_all(cfg)
    ev = report.evaluation
    for stage, rep in ev.items():
        print(stage, "skipped" if rep is None else f"AUROC {rep['auroc']['mean']:.4f}")
    for c in report.correct_rates:
        print(f"K={c['k']}  raw cr {c['raw']['overall']:.4f}  shap cr {c['shap']['overall']:.4f}")


def cmd_verify(args, cfg, art):
    problems = verify_outputs(args.out or cfg.output_dir)
    for p in problems:
        print(p)
    if problems:
        raise SystemExit(1)
    print("ok")


COMMANDS = {
    "generate": cmd_generate, "preprocess": cmd_preprocess, "train": cmd_train,
    "evaluate": cmd_evaluate, "explain": cmd_explain, "cluster": cmd_cluster,
    "embed": cmd_embed, "stratify": cmd_stratify, "minimize": cmd_minimize,
    "run-all": cmd_run_all, "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON file")
    common.add_argument("--seed", type=_u64, help="master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--stage", help="pre, intra or post (a trailing + means cumulative)")
    common.add_argument("--cumulative", action="store_true", help="use the cumulative window of --stage")
    common.add_argument("--k", type=_int_list, help="cluster counts, e.g. 2,3,4")
    common.add_argument("--top-n", type=_int_list, help="feature counts for minimized models, e.g. 5,10")
    common.add_argument("--input", help="input CSV (cohort) or trajectory directory")
    common.add_argument("--model", help="model JSON produced by 'train'")
    common.add_argument("--shap", help="SHAP CSV produced by 'explain'")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="shapheno", description="Explanation-space phenotyping of tabular and staged cohorts.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "generate":
            sp.add_argument("--kind", choices=("cohort", "trajectories"), default="cohort")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        art = None if args.command in ("run-all", "verify") else _Artifacts(cfg)
        COMMANDS[args.command](args, cfg, art)
    except (dataio.SchemaError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
