"""End-to-end studies: configuration, orchestration and the report index.

Every number a study emits is a function of the :class:`RunConfig` alone.
All random streams (cohort sampling, fold assignment, row subsampling,
t-SNE start) are seeded from ``RunConfig.seed``.  Each artifact carries the
config hash, and ``report.json`` lists the SHA-256 of every artifact.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import dataio
from .embed import pca_project, tsne, write_scatter_svg
from .models.gbm import TrainConfig, train_gbm
from .models.linear import train_logreg
from .models.validation import EvalReport, FoldDegeneracyError, kfold_cv, stratified_folds
from .phenoclust import compare_spaces, cut_tree, ward_cluster, zscore
from .shapley import ShapMatrix, build_shap_matrix, global_importance
from .syncohort import CONTROL_PHENOTYPES, Cohort, SyntheticConfig, generate_cohort, generate_trajectories
from .temporal import (
    SUMMARY_FIELDS, TrajectoryCohort, build_design_matrix, impute_column_means, parse_stage, preprocess,
    quantile,
)

log = logging.getLogger(__name__)

VERSION = "0.1.0"
ALL_STAGES = ("pre", "intra", "post", "pre+", "intra+", "post+")
SOURCES = ("synthetic", "fixture", "trajectories", "cohort_csv")
BANDS = ("low", "medium", "high")


@dataclass
class RunConfig:
    """One JSON document drives a run; field names mirror the JSON keys.

    ``source`` selects the data: ``synthetic`` (flat cohort with known
    phenotypes, settings in ``synthetic``), ``fixture`` (longitudinal
    cohort from :func:`generate_trajectories`, settings in ``fixture``),
    ``trajectories`` (CSV files in ``trajectory_dir``) or ``cohort_csv``.
    """

    source: str = "synthetic"
    synthetic: dict = field(default_factory=lambda: {"n_samples": 3000, "n_features": 30})
    fixture: dict = field(default_factory=lambda: {"n_patients": 300, "signal_stage": "pre"})
    trajectory_dir: str | None = None
    statics_csv: str | None = None
    cohort_csv: str | None = None
    stages: list = field(default_factory=lambda: list(ALL_STAGES))
    preprocess: dict = field(default_factory=lambda: {"iqr_k": 1.5, "missing_threshold": 0.20})
    model: str = "gbm"
    train: dict = field(default_factory=dict)
    cv_folds: int = 10
    shap: dict = field(default_factory=lambda: {"top_features": 10})
    cluster_k: list = field(default_factory=lambda: [2, 3, 4, 5, 6])
    embedding: dict = field(default_factory=lambda: {
        "methods": ["pca", "tsne"], "perplexity": 30.0, "iterations": 1000, "max_points": 1000,
    })
    top_n: list = field(default_factory=lambda: [5, 10, 20])
    output_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        if not self.stages:
            raise ValueError("stage list must not be empty")
        for s in self.stages:
            parse_stage(s)
        if len(set(self.stages)) != len(self.stages):
            raise ValueError("stage list has duplicates")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")
        if self.model not in ("gbm", "logreg"):
            raise ValueError(f"model must be 'gbm' or 'logreg', got {self.model!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if any(int(k) < 1 for k in self.cluster_k):
            raise ValueError("cluster sizes must be positive")
        if any(int(n) < 1 for n in self.top_n):
            raise ValueError("top_n entries must be positive")
        for attr, needed in (("trajectory_dir", "trajectories"), ("cohort_csv", "cohort_csv")):
            path = getattr(self, attr)
            if self.source == needed and path is None:
                raise ValueError(f"source {needed!r} needs {attr}")
            if path is not None and not Path(path).exists():
                raise FileNotFoundError(f"{attr}: {path} does not exist")
        if self.statics_csv is not None and not Path(self.statics_csv).exists():
            raise FileNotFoundError(f"statics_csv: {self.statics_csv} does not exist")
        self.train_config()  # validate early

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_overrides(self, **kw) -> "RunConfig":
        d = self.to_dict()
        d.update({k: v for k, v in kw.items() if v is not None})
        return RunConfig.from_dict(d)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{"seed": int(self.seed), **self.train})

    def synthetic_config(self) -> SyntheticConfig:
        return SyntheticConfig(**{"seed": int(self.seed), **self.synthetic})

    @property
    def config_hash(self) -> str:
        """SHA-256 of the config without ``output_dir`` (where results go is
        not part of what they are)."""
        return config_hash_of(self.to_dict())

    def trainer(self) -> Callable[[Cohort], object]:
        if self.model == "gbm":
            cfg = self.train_config()
            return lambda c: train_gbm(c, cfg)
        params = dict(self.train)
        return lambda c: train_logreg(c, **params)


def config_hash_of(d: dict) -> str:
    d = dict(d)
    d.pop("output_dir", None)
    return dataio.sha256_of(d)


@dataclass
class RunReport:
    """``evaluation`` has one entry per requested stage (or ``"all"`` for a
    flat cohort); skipped stages map to ``None`` and are listed in ``skipped``."""

    provenance: dict
    evaluation: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)
    correct_rates: list = field(default_factory=list)
    importance: dict = field(default_factory=dict)
    clusters: dict = field(default_factory=dict)
    risk_bands: dict | None = None
    minimized: list | None = None
    artifacts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataio.to_jsonable(dataclasses.asdict(self))


class _Artifacts:
    """Writes into the output directory and records each file's hash."""

    def __init__(self, config: RunConfig, out: Path | None = None):
        self.out = Path(config.output_dir if out is None else out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.hash = config.config_hash
        self.files: dict[str, str] = {}

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def done(self, p: Path):
        self.files[p.relative_to(self.out).as_posix()] = dataio.file_sha256(p)

    def json(self, name: str, obj):
        d = dataio.to_jsonable(obj)
        if isinstance(d, dict):
            d = {**d, dataio.PROVENANCE_KEY: self.hash}
        self.done(dataio.write_json(d, self.path(name)))

    def csv(self, name: str, writer, *args, **kw):
        self.done(writer(*args, self.path(name), provenance=self.hash, **kw))

    def svg(self, name: str, emb, groups, title: str):
        p = write_scatter_svg(self.path(name), emb, groups, title)
        text = p.read_text(encoding="utf-8")
        head, rest = text.split("\n", 1)
        p.write_text(f"{head}\n<!-- {dataio.PROVENANCE_KEY}={self.hash} -->\n{rest}", encoding="utf-8")
        self.done(p)


def _provenance(config: RunConfig) -> dict:
    return {dataio.PROVENANCE_KEY: config.config_hash, "seed": int(config.seed), "version": VERSION}


def _append_folds(art: _Artifacts, name: str, folds: np.ndarray):
    def write(folds, path, provenance):
        fh, w = dataio._open_writer(path, provenance)
        with fh:
            w.writerow(["row_id", "fold"])
            for i, f in enumerate(folds):
                w.writerow([i, int(f)])
        return Path(path)
    art.csv(name, write, folds)


# -- building blocks -------------------------------------------------------

def importance_table(matrix: ShapMatrix, cohort: Cohort, top: int | None = None) -> dict:
    """Global ranking plus, when phenotypes are known, one ranking per
    positive phenotype over its own rows."""
    rank = global_importance(matrix)
    out = {"global": [{"feature": f, "mean_abs": v} for f, v in rank[:top]]}
    if cohort.phenotype is not None:
        per = {}
        for ph in sorted(set(cohort.phenotype.tolist())):
            if ph in CONTROL_PHENOTYPES:
                continue
            rows = np.flatnonzero((cohort.phenotype == ph) & (cohort.labels == 1))
            if rows.size:
                per[ph] = [{"feature": f, "mean_abs": v} for f, v in global_importance(matrix, rows)[:top]]
        out["per_phenotype"] = per
    return out


def minimized_model_study(
    cohort: Cohort,
    shap_matrix: ShapMatrix,
    top_n: Sequence[int],
    trainer: Callable[[Cohort], object],
    folds: np.ndarray,
    full: EvalReport | None = None,
) -> list[dict]:
    """Retrain on the ``n`` most important features (kept in column order)
    with the given fold partition; the first row is the full-feature run."""
    P = cohort.n_features
    for n in top_n:
        if not 1 <= n <= P:
            raise ValueError(f"top_n={n} outside [1, {P}]")
    k = int(folds.max()) + 1
    if full is None:
        full = kfold_cv(cohort, k, trainer, folds=folds)
    rows = [{"n": P, "features": list(cohort.feature_names), "full": True, **_metrics(full)}]
    rank = [cohort.feature_names.index(f) for f, _ in global_importance(shap_matrix)]
    for n in top_n:
        cols = sorted(rank[:n])
        rep = kfold_cv(cohort.select_features(cols), k, trainer, folds=folds)
        rows.append({"n": int(n), "features": [cohort.feature_names[c] for c in cols], "full": False, **_metrics(rep)})
    return rows


def _metrics(rep: EvalReport) -> dict:
    return {"auroc": rep.auroc_mean, "auroc_std": rep.auroc_std, "auprc": rep.auprc_mean, "auprc_std": rep.auprc_std}


def band_of(scores: np.ndarray, cuts: tuple[float, float]) -> np.ndarray:
    """0 / 1 / 2 for low (<= first cut), medium, high (> second cut)."""
    s = np.asarray(scores, dtype=float)
    return np.where(s <= cuts[0], 0, np.where(s <= cuts[1], 1, 2))


def stratify_risk(models: dict, cohorts: dict, labels=None) -> dict:
    """Band per-patient risk at each cumulative stage.

    ``models`` and ``cohorts`` map cumulative stage names (``"pre+"``, ...)
    to a fitted model and its design matrix.  The tertile cut points of the
    earliest stage's scores are reused for later stages.
    """
    order = [s for s in ("pre+", "intra+", "post+") if s in models]
    if not order:
        raise ValueError("need at least one cumulative-stage model")
    scores = {s: np.asarray(models[s].predict_proba(cohorts[s].features), dtype=float) for s in order}
    n = {s: scores[s].size for s in order}
    if len(set(n.values())) != 1:
        raise ValueError("stage cohorts differ in patient count")
    first = scores[order[0]]
    cuts = (quantile(first, 1 / 3), quantile(first, 2 / 3))
    bands = {s: band_of(scores[s], cuts) for s in order}
    y = np.asarray(cohorts[order[0]].labels if labels is None else labels)
    per_stage = {}
    for s in order:
        b = bands[s]
        counts = {BANDS[i]: int((b == i).sum()) for i in range(3)}
        high = b == 2
        prev = y.mean() if y.size else float("nan")
        rr = float(y[high].mean() / prev) if high.any() and prev > 0 else float("nan")
        per_stage[s] = {"counts": counts, "risk_ratio_high": rr}
    transitions = {}
    for a, b in zip(order, order[1:]):
        m = np.zeros((3, 3), dtype=int)
        np.add.at(m, (bands[a], bands[b]), 1)
        transitions[f"{a}->{b}"] = m.tolist()
    return {
        "reference_stage": order[0],
        "cuts": list(cuts),
        "stages": per_stage,
        "transitions": transitions,
        "bands": {s: bands[s].tolist() for s in order},
    }


def _embed(art: _Artifacts, config: RunConfig, name: str, X: np.ndarray, groups, phenotype, rows):
    emb_cfg = config.embedding
    for method in emb_cfg.get("methods", ()):
        if method == "pca":
            emb = pca_project(X)
        elif method == "tsne":
            perplexity = float(emb_cfg.get("perplexity", 30.0))
            if not perplexity < (X.shape[0] - 1) / 3:
                log.warning("skipping t-SNE of %s: perplexity %s too large for %d points", name, perplexity, X.shape[0])
                continue
            emb = tsne(X, perplexity, int(emb_cfg.get("iterations", 1000)), seed=int(config.seed))
        else:
            raise ValueError(f"unknown embedding method {method!r}")
        art.csv(f"embed_{name}_{method}.csv", dataio.write_embedding_csv, emb,
                clusters=groups, phenotype=phenotype, row_ids=rows)
        art.svg(f"embed_{name}_{method}.svg", emb, phenotype if phenotype is not None else groups,
                f"{name} / {method}")


def _embedding_rows(n: int, config: RunConfig) -> np.ndarray:
    cap = config.embedding.get("max_points")
    if cap is None or n <= cap:
        return np.arange(n)
    rng = np.random.default_rng([int(config.seed), 2])
    return np.sort(rng.choice(n, size=int(cap), replace=False))


# -- studies ---------------------------------------------------------------

def load_flat_cohort(config: RunConfig) -> Cohort:
    if config.source == "synthetic":
        return generate_cohort(config.synthetic_config())
    if config.source == "cohort_csv":
        return dataio.read_cohort_csv(config.cohort_csv)
    raise ValueError(f"source {config.source!r} is longitudinal")


def load_trajectories(config: RunConfig) -> tuple[TrajectoryCohort, list[str], dict | None]:
    if config.source == "fixture":
        traj = generate_trajectories(**{"seed": int(config.seed), **config.fixture})
    elif config.source == "trajectories":
        traj = dataio.read_trajectories(config.trajectory_dir)
    else:
        raise ValueError(f"source {config.source!r} is not longitudinal")
    names, statics = [], None
    if config.statics_csv is not None:
        names, statics = dataio.read_statics_csv(config.statics_csv)
    return traj, names, statics


def run_synthetic_study(config: RunConfig, out: Path | None = None) -> RunReport:
    """Cohort -> CV -> full refit -> SHAP -> raw vs SHAP clustering -> embeddings."""
    art = _Artifacts(config, out)
    report = RunReport(_provenance(config))
    cohort = load_flat_cohort(config)
    art.csv("cohort.csv", dataio.write_cohort_csv, cohort)
    trainer = config.trainer()
    if config.model == "logreg":
        cohort = dataclasses.replace(cohort, features=impute_column_means(cohort.features))

    folds = stratified_folds(cohort.labels, config.cv_folds, int(config.seed))
    _append_folds(art, "folds.csv", folds)
    cv = kfold_cv(cohort, config.cv_folds, trainer, folds=folds)
    report.evaluation["all"] = cv.to_dict()
    art.json("cv.json", cv)

    model = trainer(cohort)
    art.done(dataio.save_model(model, art.path("model.json"), provenance=art.hash))
    if config.model != "gbm":
        log.info("SHAP attributions need a tree ensemble; stopping after evaluation")
        report.artifacts = dict(sorted(art.files.items()))
        return report
    shap = build_shap_matrix(model, cohort)
    art.csv("shap.csv", dataio.write_shap_csv, shap)
    report.importance = importance_table(shap, cohort, config.shap.get("top_features"))
    art.json("importance.json", report.importance)

    ks = [int(k) for k in config.cluster_k]
    if cohort.phenotype is not None:
        comparison, raw_tree, shap_tree = compare_spaces(cohort, shap, ks, return_trees=True)
        report.correct_rates = [c.to_dict() for c in comparison]
        art.json("correct_rate.json", {"comparisons": report.correct_rates})
    else:
        raw_tree, shap_tree = ward_cluster(zscore(cohort.features)), ward_cluster(shap.values)
    for space, tree in (("raw", raw_tree), ("shap", shap_tree)):
        art.csv(f"dendrogram_{space}.csv", dataio.write_dendrogram_csv, tree)
        report.clusters[space] = {}
        for k in ks:
            a = cut_tree(tree, k)
            art.csv(f"assign_{space}_k{k}.csv", dataio.write_assignment_csv, a)
            report.clusters[space][str(k)] = np.bincount(a.labels)[1:].tolist()

    rows = _embedding_rows(cohort.n_samples, config)
    k_show = 4 if 4 in ks else ks[0]
    pheno = None if cohort.phenotype is None else cohort.phenotype[rows]
    for space, X, tree in (("raw", zscore(cohort.features), raw_tree), ("shap", shap.values, shap_tree)):
        groups = cut_tree(tree, k_show).labels[rows]
        _embed(art, config, space, X[rows], groups, pheno, rows)

    if config.top_n:
        top = [int(n) for n in config.top_n if int(n) <= cohort.n_features]
        report.minimized = minimized_model_study(cohort, shap, top, trainer, folds, full=cv)
        art.json("minimized.json", {"rows": report.minimized})
    report.artifacts = dict(sorted(art.files.items()))
    return report


def stage_design(traj: TrajectoryCohort, label: str, static_names=(), statics=None) -> Cohort:
    """Design matrix for one stage; static features sit in the pre window, so
    they enter ``pre`` and every cumulative stage."""
    stage, cumulative = parse_stage(label)
    with_static = bool(static_names) and (stage == "pre" or cumulative)
    return build_design_matrix(
        traj, stage, cumulative,
        statics if with_static else None,
        static_names if with_static else (),
    )


def run_stagewise_study(config: RunConfig, out: Path | None = None) -> RunReport:
    """Per stage and cumulative stage: design matrix -> CV -> SHAP -> clusters,
    then risk banding over the cumulative stages."""
    art = _Artifacts(config, out)
    report = RunReport(_provenance(config))
    traj, static_names, statics = load_trajectories(config)
    pp = config.preprocess
    traj = preprocess(traj, float(pp.get("iqr_k", 1.5)), float(pp.get("missing_threshold", 0.20)))
    trainer = config.trainer()
    models, cohorts = {}, {}
    ks = [int(k) for k in config.cluster_k]
    for label in config.stages:
        cohort = stage_design(traj, label, static_names, statics)
        tag = label.replace("+", "_cum")
        nobs = [i for i, c in enumerate(cohort.feature_names) if c.endswith("__nobs")]
        has_static = cohort.n_features > len(nobs) * len(SUMMARY_FIELDS)
        if not has_static and (cohort.features[:, nobs] == 0).all():
            report.evaluation[label] = None
            report.skipped[label] = "no observations in this stage"
            continue
        # empty-slice summaries are NaN; fill with column means before training
        cohort = dataclasses.replace(cohort, features=impute_column_means(cohort.features))
        art.csv(f"design_{tag}.csv", dataio.write_cohort_csv, cohort)
        try:
            folds = stratified_folds(cohort.labels, config.cv_folds, int(config.seed))
            cv = kfold_cv(cohort, config.cv_folds, trainer, folds=folds)
        except (FoldDegeneracyError, ValueError) as exc:
            report.evaluation[label] = None
            report.skipped[label] = f"{type(exc).__name__}: {exc}"
            continue
        report.evaluation[label] = cv.to_dict()
        art.json(f"cv_{tag}.json", cv)
        model = trainer(cohort)
        art.done(dataio.save_model(model, art.path(f"model_{tag}.json"), provenance=art.hash))
        models[label], cohorts[label] = model, cohort
        if config.model == "gbm":
            shap = build_shap_matrix(model, cohort)
            art.csv(f"shap_{tag}.csv", dataio.write_shap_csv, shap)
            report.importance[label] = importance_table(shap, cohort, config.shap.get("top_features"))
            tree = ward_cluster(shap.values)
            report.clusters[label] = {}
            for k in ks:
                if k <= cohort.n_samples:
                    a = cut_tree(tree, k)
                    art.csv(f"assign_{tag}_k{k}.csv", dataio.write_assignment_csv, a)
                    report.clusters[label][str(k)] = np.bincount(a.labels)[1:].tolist()
    cumulative = {s: m for s, m in models.items() if s.endswith("+")}
    if cumulative:
        report.risk_bands = stratify_risk(cumulative, cohorts)
        art.json("risk_bands.json", report.risk_bands)
    report.artifacts = dict(sorted(art.files.items()))
    return report


def run_all(config: RunConfig) -> RunReport:
    """Run the study matching ``config.source`` and write ``report.json``."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_json(config.to_dict(), out / "config.json")
    if config.source in ("synthetic", "cohort_csv"):
        report = run_synthetic_study(config, out)
    else:
        report = run_stagewise_study(config, out)
    dataio.write_json(report.to_dict(), out / "report.json")
    return report


def verify_outputs(out) -> list[str]:
    """Problems found in an output directory (empty when consistent).

    Recomputes the config hash from ``config.json``, checks that each
    artifact embeds it and that its bytes match the digest in ``report.json``.
    """
    out = Path(out)
    problems = []
    try:
        want = config_hash_of(dataio.read_json(out / "config.json"))
        report = dataio.read_json(out / "report.json")
    except (OSError, ValueError) as exc:
        return [f"cannot read run metadata: {exc}"]
    got = report.get("provenance", {}).get(dataio.PROVENANCE_KEY)
    if got != want:
        problems.append(f"report.json: config hash {got} != recomputed {want}")
    for name, digest in sorted(report.get("artifacts", {}).items()):
        p = out / name
        if not p.exists():
            problems.append(f"{name}: missing")
            continue
        if dataio.file_sha256(p) != digest:
            problems.append(f"{name}: content digest mismatch")
        if dataio.read_provenance(p) != want:
            problems.append(f"{name}: embedded config hash missing or stale")
    return problems
