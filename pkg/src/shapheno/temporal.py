"""Preprocessing and temporal abstraction of stage-sliced trajectories.

A trajectory is a set of irregular per-variable series plus pre / intra /
post stage windows.  Each stage slice is collapsed to six numbers per
variable (5% and 95% quantiles, median, mean, median absolute deviation,
observation count) and the outcome series to its maximum, which yields a
flat :class:`~shapheno.syncohort.Cohort`.

Quantiles use linear interpolation between order statistics at
``h = (n - 1) p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .syncohort import Cohort

STAGES = ("pre", "intra", "post")
SUMMARY_FIELDS = ("rmin", "rmax", "median", "mean", "mad", "nobs")


class UnusableCohortError(ValueError):
    """Preprocessing removed every variable."""


class UnlabeledPatientError(ValueError):
    """A patient has no outcome observations."""


@dataclass(frozen=True)
class StageBoundaries:
    """Closed ``(start, end)`` windows; ``None`` or NaN marks an absent stage."""

    pre: tuple[float, float] | None
    intra: tuple[float, float] | None
    post: tuple[float, float] | None

    def __post_init__(self):
        ends = []
        for name in STAGES:
            w = self.window(name)
            if w is None:
                continue
            if w[0] > w[1]:
                raise ValueError(f"{name} stage starts after it ends: {w}")
            if ends and w[0] < ends[-1]:
                raise ValueError(f"{name} stage overlaps the previous stage")
            ends.append(w[1])

    def window(self, stage: str) -> tuple[float, float] | None:
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        w = getattr(self, stage)
        if w is None or any(v is None or math.isnan(v) for v in w):
            return None
        return (float(w[0]), float(w[1]))

    @property
    def end(self) -> float:
        present = [self.window(s) for s in STAGES if self.window(s) is not None]
        return max(w[1] for w in present) if present else 0.0


@dataclass
class PatientTrajectory:
    """Per-variable ``(times, values)`` arrays (NaN = missing), stages, outcomes."""

    patient_id: str
    series: dict[str, tuple[np.ndarray, np.ndarray]]
    stages: StageBoundaries
    outcomes: list[tuple[float, int]] = field(default_factory=list)

    def __post_init__(self):
        clean = {}
        for var, (t, v) in self.series.items():
            t = np.asarray(t, dtype=float)
            v = np.asarray(v, dtype=float)
            if t.shape != v.shape:
                raise ValueError(f"{self.patient_id}/{var}: times and values differ in length")
            if np.any(np.diff(t) < 0):
                raise ValueError(f"{self.patient_id}/{var}: timestamps not sorted")
            clean[var] = (t, v)
        self.series = clean


@dataclass
class TrajectoryCohort:
    patients: list[PatientTrajectory]
    variable_names: list[str]

    def __post_init__(self):
        vocab = set(self.variable_names)
        for p in self.patients:
            extra = set(p.series) - vocab
            if extra:
                raise ValueError(f"patient {p.patient_id} has unknown variables {sorted(extra)}")

    def __len__(self):
        return len(self.patients)


@dataclass(frozen=True)
class DistributionSummary:
    r_min: float
    r_max: float
    median: float
    mean: float
    mad: float
    n_obs: int

    def as_row(self) -> list[float]:
        return [self.r_min, self.r_max, self.median, self.mean, self.mad, float(self.n_obs)]


# -- order statistics ------------------------------------------------------

def quantile(values, p: float) -> float:
    """Linearly interpolated quantile at ``h = (n - 1) p`` of sorted values."""
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0:
        return math.nan
    h = (x.size - 1) * p
    lo = int(math.floor(h))
    hi = min(lo + 1, x.size - 1)
    return float(x[lo] + (h - lo) * (x[hi] - x[lo]))


def _keep_mask(values: np.ndarray, k: float) -> np.ndarray:
    keep = ~np.isnan(values)
    while keep.any():
        kept = values[keep]
        q1, q3 = quantile(kept, 0.25), quantile(kept, 0.75)
        iqr = q3 - q1
        inside = keep & (values >= q1 - k * iqr) & (values <= q3 + k * iqr)
        if inside.sum() == keep.sum():
            break
        keep = inside
    return keep


def clean_outliers(values: Sequence[float], k: float = 1.5) -> list[float]:
    """Drop values outside ``[Q1 - k IQR, Q3 + k IQR]``, preserving order.

    The fence is recomputed on the survivors until nothing more is removed,
    so the result is a fixed point (cleaning twice changes nothing).
    """
    if k <= 0:
        raise ValueError("k must be positive")
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return []
    return arr[_keep_mask(arr, k)].tolist()


def impute_locf(series, fallback: float) -> list[tuple[float, float]]:
    """Fill missing values with the last observed one (``fallback`` before any)."""
    out = []
    last = fallback
    for t, v in series:
        if v is None or (isinstance(v, float) and math.isnan(v)):
            out.append((t, last))
        else:
            last = float(v)
            out.append((t, last))
    return out


def abstract_distribution(values: Iterable[float]) -> DistributionSummary:
    x = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
    x = x[~np.isnan(x)]
    if x.size == 0:
        nan = math.nan
        return DistributionSummary(nan, nan, nan, nan, nan, 0)
    med = quantile(x, 0.5)
    return DistributionSummary(
        r_min=quantile(x, 0.05),
        r_max=quantile(x, 0.95),
        median=med,
        mean=math.fsum(x.tolist()) / x.size,
        mad=quantile(np.abs(x - med), 0.5),
        n_obs=int(x.size),
    )


def abstract_outcome(outcomes: Sequence[int]) -> int:
    if len(outcomes) == 0:
        raise UnlabeledPatientError("empty outcome series")
    return int(max(outcomes))


# -- cohort preprocessing --------------------------------------------------

def clean_cohort_outliers(cohort: TrajectoryCohort, k: float = 1.5) -> TrajectoryCohort:
    """Per-variable outlier removal with the fence pooled across patients."""
    patients = [replace(p, series=dict(p.series)) for p in cohort.patients]
    for var in cohort.variable_names:
        owners = [p for p in patients if var in p.series]
        if not owners:
            continue
        pooled = np.concatenate([p.series[var][1] for p in owners])
        keep = _keep_mask(pooled, k) | np.isnan(pooled)
        start = 0
        for p in owners:
            t, v = p.series[var]
            m = keep[start:start + v.size]
            start += v.size
            p.series[var] = (t[m], v[m])
    return TrajectoryCohort(patients, list(cohort.variable_names))


def _observed(p: PatientTrajectory, var: str) -> bool:
    if var not in p.series:
        return False
    return bool(np.any(~np.isnan(p.series[var][1])))


def missing_fractions(cohort: TrajectoryCohort) -> dict[str, float]:
    """Fraction of patients without a single observed value, per variable."""
    n = max(len(cohort), 1)
    return {
        var: sum(not _observed(p, var) for p in cohort.patients) / n
        for var in cohort.variable_names
    }


def drop_sparse_variables(cohort: TrajectoryCohort, threshold: float = 0.20) -> TrajectoryCohort:
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    frac = missing_fractions(cohort)
    keep = [v for v in cohort.variable_names if frac[v] <= threshold]
    if not keep:
        raise UnusableCohortError(
            f"every variable exceeds {threshold:.0%} missingness: "
            + ", ".join(f"{v}={frac[v]:.2f}" for v in cohort.variable_names)
        )
    patients = [
        replace(p, series={v: s for v, s in p.series.items() if v in keep})
        for p in cohort.patients
    ]
    return TrajectoryCohort(patients, keep)


def impute_cohort_locf(cohort: TrajectoryCohort) -> TrajectoryCohort:
    """LOCF per series; leading gaps take the variable's cohort-wide mean."""
    means = {}
    for var in cohort.variable_names:
        vals = [p.series[var][1] for p in cohort.patients if var in p.series]
        vals = np.concatenate(vals) if vals else np.array([])
        vals = vals[~np.isnan(vals)]
        means[var] = float(vals.mean()) if vals.size else math.nan
    patients = []
    for p in cohort.patients:
        series = {}
        for var, (t, v) in p.series.items():
            filled = impute_locf(zip(t.tolist(), v.tolist()), means[var])
            series[var] = (t.copy(), np.array([val for _, val in filled], dtype=float))
        patients.append(replace(p, series=series))
    return TrajectoryCohort(patients, list(cohort.variable_names))


def preprocess(cohort: TrajectoryCohort, k: float = 1.5, threshold: float = 0.20) -> TrajectoryCohort:
    """Outlier removal, sparse-variable exclusion, then LOCF imputation."""
    return impute_cohort_locf(drop_sparse_variables(clean_cohort_outliers(cohort, k), threshold))


# -- stage slicing and design matrices -------------------------------------

def parse_stage(name: str) -> tuple[str, bool]:
    """``"intra+"`` -> ``("intra", True)``; ``"post"`` -> ``("post", False)``."""
    cumulative = name.endswith("+")
    stage = name[:-1] if cumulative else name
    if stage not in STAGES:
        raise ValueError(f"unknown stage {name!r}")
    return stage, cumulative


def stage_label(stage: str, cumulative: bool) -> str:
    return stage + ("+" if cumulative else "")


def _stage_mask(t: np.ndarray, stages: StageBoundaries, stage: str, cumulative: bool) -> np.ndarray:
    w = stages.window(stage)
    if w is None:
        return np.zeros(t.shape, dtype=bool)
    start, end = w
    if cumulative:
        return (t >= 0.0) & (t <= end)
    mask = (t >= start) & (t <= end)
    prev = STAGES.index(stage) - 1
    if prev >= 0:
        pw = stages.window(STAGES[prev])
        if pw is not None:
            # a shared boundary point belongs to the earlier stage
            mask &= t > pw[1]
    return mask


def slice_stage(traj: PatientTrajectory, stage: str, cumulative: bool = False) -> dict[str, np.ndarray]:
    out = {}
    for var, (t, v) in traj.series.items():
        m = _stage_mask(t, traj.stages, stage, cumulative)
        vals = v[m]
        out[var] = vals[~np.isnan(vals)]
    return out


def design_column_names(variables: Sequence[str], static_names: Sequence[str] = ()) -> list[str]:
    return list(static_names) + [f"{v}__{s}" for v in variables for s in SUMMARY_FIELDS]


def build_design_matrix(
    cohort: TrajectoryCohort,
    stage: str,
    cumulative: bool = False,
    static_features: dict[str, Sequence[float]] | None = None,
    static_names: Sequence[str] = (),
) -> Cohort:
    """Collapse each patient's stage slice into one design-matrix row.

    Columns are the static features (if any) followed by six summaries per
    variable named ``<variable>__<summary>``.  Empty slices give NaN
    summaries and ``nobs = 0``.
    """
    static_names = list(static_names)
    rows, labels = [], []
    for p in cohort.patients:
        static = []
        if static_names:
            if static_features is None or p.patient_id not in static_features:
                raise KeyError(f"no static features for patient {p.patient_id}")
            static = [float(v) for v in static_features[p.patient_id]]
            if len(static) != len(static_names):
                raise ValueError(f"patient {p.patient_id}: expected {len(static_names)} static values")
        slices = slice_stage(p, stage, cumulative)
        row = list(static)
        for var in cohort.variable_names:
            row.extend(abstract_distribution(slices.get(var, np.array([]))).as_row())
        rows.append(row)
        try:
            labels.append(abstract_outcome([y for _, y in p.outcomes]))
        except UnlabeledPatientError as exc:
            raise UnlabeledPatientError(f"patient {p.patient_id}: {exc}") from None
    names = design_column_names(cohort.variable_names, static_names)
    features = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return Cohort(features, np.array(labels, dtype=int), names)


def impute_column_means(features: np.ndarray, fill_empty: float = 0.0) -> np.ndarray:
    """Replace NaN by the column mean; all-NaN columns become ``fill_empty``."""
    x = np.array(features, dtype=float, copy=True)
    miss = np.isnan(x)
    if not miss.any():
        return x
    counts = (~miss).sum(axis=0)
    sums = np.where(miss, 0.0, x).sum(axis=0)
    means = np.where(counts > 0, sums / np.maximum(counts, 1), fill_empty)
    x[miss] = np.broadcast_to(means, x.shape)[miss]
    return x
