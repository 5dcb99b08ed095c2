"""Synthetic cohorts with known latent phenotypes.

Every feature is drawn i.i.d. from a standard normal.  Four threshold
predicates decide the phenotype of a draw: ``alpha`` is the control
phenotype (label 0) and ``beta``, ``gamma``, ``delta`` are the positive
phenotypes (label 1).  Feature ``x10`` is shared by the three positive
predicates; every other referenced feature is informative for exactly one
phenotype, and unreferenced features are pure noise.

The random stream is numpy's PCG64 (``numpy.random.default_rng``) with
normals from ``Generator.standard_normal``.  Given a seed, the cohort is
bit-identical across runs; use :mod:`shapheno.dataio` to move cohorts
between implementations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ALPHA, BETA, GAMMA, DELTA = "alpha", "beta", "gamma", "delta"
PHENOTYPES = (ALPHA, BETA, GAMMA, DELTA)
CONTROL_PHENOTYPES = frozenset({ALPHA})


class RejectionBudgetExceeded(RuntimeError):
    """Raised when rejection sampling cannot fill the requested cohort."""


@dataclass(frozen=True)
class PhenotypePredicate:
    """A named boolean rule over a few feature indices.

    ``rule`` receives only the values at ``required_features`` (in order),
    so it can never read anything else.
    """

    name: str
    required_features: tuple[int, ...]
    rule: Callable[..., bool] = field(compare=False)

    def __call__(self, x: np.ndarray) -> bool:
        return bool(self.rule(*(x[i] for i in self.required_features)))


def _alpha(x1, x2, x3):
    return x1 < 0 and x2 < 0 and x3 < 0


def _beta(x10, x11, x12):
    return (x10 > 0.5 or x11 > 0.5) and x12 > 0.5


def _gamma(x10, x13, x14):
    return x10 <= 0.5 and x13 > 0.5 and x14 <= 0.5


def _delta(x10, x15, x16):
    return x10 <= 0.5 and x15 <= 0.5 and x16 > 0.5


DEFAULT_PREDICATES = (
    PhenotypePredicate(ALPHA, (1, 2, 3), _alpha),
    PhenotypePredicate(BETA, (10, 11, 12), _beta),
    PhenotypePredicate(GAMMA, (10, 13, 14), _gamma),
    PhenotypePredicate(DELTA, (10, 15, 16), _delta),
)

SHARED_FEATURES = (10,)


@dataclass(frozen=True)
class SyntheticConfig:
    """Settings for :func:`generate_cohort`.

    ``unmatched`` controls draws that satisfy no predicate: ``"control"``
    labels them with the control phenotype, ``"reject"`` discards them.
    ``balanced`` fills an equal quota per phenotype (remainder goes to the
    earliest phenotypes); otherwise phenotypes appear in the proportions
    the sampler produces them.  Draws matching two or more predicates are
    always discarded.
    """

    n_samples: int = 3000
    n_features: int = 30
    seed: int = 0
    predicates: tuple[PhenotypePredicate, ...] = DEFAULT_PREDICATES
    max_rejections: int | None = None
    unmatched: str = "control"
    balanced: bool = True

    def __post_init__(self):
        if self.n_samples <= 0 or self.n_features <= 0:
            raise ValueError("n_samples and n_features must be positive")
        top = max(i for p in self.predicates for i in p.required_features)
        if self.n_features < top + 1:
            raise ValueError(
                f"n_features={self.n_features} but predicates reference index {top}"
            )
        if self.unmatched not in ("control", "reject"):
            raise ValueError(f"unmatched must be 'control' or 'reject', got {self.unmatched!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def rejection_budget(self) -> int:
        if self.max_rejections is None:
            return 1000 * self.n_samples
        return self.max_rejections


@dataclass
class Cohort:
    """A flat design matrix with binary labels.

    ``features`` may contain NaN for missing values (ingested cohorts);
    synthetic cohorts are always fully observed.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str]
    phenotype: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels disagree on the number of rows")
        if len(self.feature_names) != self.features.shape[1]:
            raise ValueError("feature_names does not match the number of columns")
        if self.phenotype is not None:
            self.phenotype = np.asarray(self.phenotype, dtype=object)
            if self.phenotype.shape[0] != self.labels.shape[0]:
                raise ValueError("phenotype and labels disagree on the number of rows")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Cohort":
        rows = np.asarray(rows)
        return Cohort(
            self.features[rows],
            self.labels[rows],
            list(self.feature_names),
            None if self.phenotype is None else self.phenotype[rows],
        )

    def select_features(self, columns: Sequence[int]) -> "Cohort":
        columns = list(columns)
        return Cohort(
            self.features[:, columns],
            self.labels.copy(),
            [self.feature_names[c] for c in columns],
            None if self.phenotype is None else self.phenotype.copy(),
        )


def feature_names(n_features: int) -> list[str]:
    return [f"x{i}" for i in range(n_features)]


def sample_feature_vector(rng: np.random.Generator, n_features: int) -> np.ndarray:
    """Draw one vector of ``n_features`` i.i.d. standard normals."""
    if n_features <= 0:
        raise ValueError("n_features must be positive")
    return rng.standard_normal(n_features)


def matching_predicates(x: np.ndarray, predicates: Sequence[PhenotypePredicate]) -> list[str]:
    top = max(i for p in predicates for i in p.required_features)
    if len(x) <= top:
        raise IndexError(f"feature vector of length {len(x)} but predicates reference index {top}")
    return [p.name for p in predicates if p(x)]


def assign_phenotype(x: np.ndarray, predicates: Sequence[PhenotypePredicate] = DEFAULT_PREDICATES):
    """Return the single phenotype whose predicate holds for ``x``.

    Returns ``None`` when no predicate or more than one predicate holds.
    """
    hits = matching_predicates(x, predicates)
    return hits[0] if len(hits) == 1 else None


def label_of(phenotype: str) -> int:
    return 0 if phenotype in CONTROL_PHENOTYPES else 1


def generate_cohort(config: SyntheticConfig = SyntheticConfig()) -> Cohort:
    """Rejection-sample a cohort with ground-truth phenotypes.

    Draws are processed in stream order: a draw is kept when it has an
    unambiguous phenotype (see :class:`SyntheticConfig`) whose quota is not
    yet full.  Each discarded draw counts against the rejection budget.
    """
    rng = np.random.default_rng(config.seed)
    names = [p.name for p in config.predicates]
    if config.balanced:
        base, extra = divmod(config.n_samples, len(names))
        quota = {n: base + (i < extra) for i, n in enumerate(names)}
    else:
        quota = {n: config.n_samples for n in names}
    control = next(p.name for p in config.predicates if p.name in CONTROL_PHENOTYPES)

    rows, tags = [], []
    rejected = 0
    budget = config.rejection_budget
    while len(rows) < config.n_samples:
        x = sample_feature_vector(rng, config.n_features)
        hits = matching_predicates(x, config.predicates)
        if len(hits) == 1:
            tag = hits[0]
        elif not hits and config.unmatched == "control":
            tag = control
        else:
            tag = None
        if tag is not None and quota[tag] > 0:
            quota[tag] -= 1
            rows.append(x)
            tags.append(tag)
            continue
        rejected += 1
        if rejected > budget:
            raise RejectionBudgetExceeded(
                f"{rejected} draws rejected with {len(rows)}/{config.n_samples} rows accepted"
            )

    phenotype = np.array(tags, dtype=object)
    labels = np.array([label_of(t) for t in tags], dtype=int)
    return Cohort(np.vstack(rows), labels, feature_names(config.n_features), phenotype)


def predicate_features(predicates: Sequence[PhenotypePredicate] = DEFAULT_PREDICATES) -> dict[str, set[int]]:
    return {p.name: set(p.required_features) for p in predicates}


def noisy_features(n_features: int, predicates: Sequence[PhenotypePredicate] = DEFAULT_PREDICATES) -> list[int]:
    used = set().union(*predicate_features(predicates).values())
    return [i for i in range(n_features) if i not in used]


# -- longitudinal fixtures -------------------------------------------------

def generate_trajectories(
    n_patients: int = 300,
    signal_stage: str = "pre",
    n_noise_variables: int = 2,
    seed: int = 0,
    obs_per_stage: int = 12,
    effect: float = 1.5,
):
    """Longitudinal cohort whose outcome depends on one stage only.

    Each patient has a latent risk ``z``; the variable ``signal`` is shifted
    by ``effect * z`` inside ``signal_stage`` and is pure noise elsewhere.
    Noise variables never carry signal.  Stage windows are
    pre ``[0, 10]``, intra ``[10, 14]``, post ``[14, 48]`` (hours), and the
    outcome series is observed after ``t = 48``.
    """
    from .temporal import PatientTrajectory, StageBoundaries, TrajectoryCohort

    if signal_stage not in ("pre", "intra", "post"):
        raise ValueError(f"unknown stage {signal_stage!r}")
    rng = np.random.default_rng(seed)
    windows = {"pre": (0.0, 10.0), "intra": (10.0, 14.0), "post": (14.0, 48.0)}
    variables = ["signal"] + [f"noise{i}" for i in range(n_noise_variables)]
    patients = []
    for pid in range(n_patients):
        z = rng.standard_normal()
        y = int(rng.random() < 1.0 / (1.0 + np.exp(-2.0 * z)))
        series = {}
        for var in variables:
            times, values = [], []
            for stage, (lo, hi) in windows.items():
                t = np.sort(rng.uniform(lo, hi, obs_per_stage))
                v = rng.standard_normal(obs_per_stage)
                if var == "signal" and stage == signal_stage:
                    v = v + effect * z
                times.append(t)
                values.append(v)
            series[var] = (np.concatenate(times), np.concatenate(values))
        n_out = 3
        out_t = 48.0 + np.arange(1, n_out + 1) * 24.0
        out_y = np.zeros(n_out, dtype=int)
        if y:
            out_y[rng.integers(n_out)] = 1
        patients.append(
            PatientTrajectory(
                patient_id=f"p{pid:04d}",
                series=series,
                stages=StageBoundaries(windows["pre"], windows["intra"], windows["post"]),
                outcomes=list(zip(out_t.tolist(), out_y.tolist())),
            )
        )
    return TrajectoryCohort(patients, variables)
