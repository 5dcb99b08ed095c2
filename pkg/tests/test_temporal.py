import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from shapheno.syncohort import generate_trajectories
from shapheno.temporal import (
    PatientTrajectory, StageBoundaries, TrajectoryCohort, UnlabeledPatientError,
    UnusableCohortError, abstract_distribution, abstract_outcome, build_design_matrix,
    clean_cohort_outliers, clean_outliers, design_column_names, drop_sparse_variables,
    impute_column_means, impute_cohort_locf, impute_locf, missing_fractions, parse_stage,
    preprocess, quantile, slice_stage,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)
BOUNDS = StageBoundaries((0.0, 10.0), (10.0, 14.0), (14.0, 48.0))


def brute_quantile(values, p):
    xs = sorted(values)
    h = (len(xs) - 1) * p
    j = int(h)
    if j + 1 >= len(xs):
        return xs[-1]
    return xs[j] + (h - j) * (xs[j + 1] - xs[j])


def patient(pid, series, outcomes=((50.0, 0),), stages=BOUNDS):
    return PatientTrajectory(pid, {k: (np.array(t, float), np.array(v, float)) for k, (t, v) in series.items()},
                             stages, list(outcomes))


# -- order statistics -----------------------------------------------------

def test_quantile_examples():
    assert quantile([1, 2, 3, 4, 5], 0.05) == pytest.approx(1.2)
    assert quantile([1, 2, 3, 4, 5], 0.95) == pytest.approx(4.8)
    assert quantile([7.0], 0.3) == 7.0
    assert math.isnan(quantile([], 0.5))


@given(st.lists(finite, min_size=1, max_size=50), st.floats(0, 1), st.floats(0, 1))
def test_quantile_monotone(xs, p, q):
    p, q = min(p, q), max(p, q)
    assert quantile(xs, p) <= quantile(xs, q)


@given(st.lists(finite, min_size=1, max_size=60), st.floats(0, 1))
def test_quantile_matches_numpy_linear(xs, p):
    assert quantile(xs, p) == pytest.approx(float(np.quantile(xs, p, method="linear")), rel=1e-12, abs=1e-9)


def test_abstract_distribution_examples():
    s = abstract_distribution([1, 2, 3, 4, 5])
    assert (s.median, s.mean, s.mad, s.n_obs) == (3, 3, 1, 5)
    assert s.r_min == pytest.approx(1.2) and s.r_max == pytest.approx(4.8)
    c = abstract_distribution([2.5, 2.5, 2.5])
    assert c.r_min == c.r_max == c.median == c.mean == 2.5 and c.mad == 0
    e = abstract_distribution([])
    assert e.n_obs == 0 and all(math.isnan(v) for v in e.as_row()[:5])


def test_abstract_distribution_ignores_nan():
    assert abstract_distribution([1.0, np.nan, 3.0]).n_obs == 2


@given(st.lists(finite, min_size=1, max_size=40), st.randoms())
def test_abstract_distribution_permutation_invariant(xs, rnd):
    ys = list(xs)
    rnd.shuffle(ys)
    assert abstract_distribution(xs) == abstract_distribution(ys)


@given(st.lists(finite, min_size=1, max_size=40))
def test_summary_ordering(xs):
    s = abstract_distribution(xs)
    assert s.r_min <= s.median <= s.r_max and s.mad >= 0


def test_abstract_outcome():
    assert abstract_outcome([0, 0, 1, 0]) == 1
    assert abstract_outcome([0, 0, 0]) == 0
    assert abstract_outcome([1]) == 1
    with pytest.raises(UnlabeledPatientError):
        abstract_outcome([])


# -- outliers and LOCF ----------------------------------------------------

def test_clean_outliers_examples():
    assert clean_outliers([1, 2, 3, 4, 100]) == [1, 2, 3, 4]
    assert clean_outliers([5, 5, 5, 5]) == [5, 5, 5, 5]
    assert clean_outliers([]) == []
    assert clean_outliers([100, 1, 2, 3, 4]) == [1, 2, 3, 4]
    with pytest.raises(ValueError):
        clean_outliers([1, 2], k=0)


def test_clean_outliers_reaches_fixpoint():
    # one fence pass would keep 12, a second would drop it
    once = clean_outliers([0, 1, 2, 3, 4, 5, 12, 20])
    assert once == [0, 1, 2, 3, 4, 5]
    assert clean_outliers(once) == once


@given(st.lists(finite, max_size=60), st.floats(0.1, 3.0))
def test_clean_outliers_idempotent(xs, k):
    once = clean_outliers(xs, k)
    assert clean_outliers(once, k) == once
    # surviving values keep their relative order
    it = iter(xs)
    assert all(any(v == w for w in it) for v in once)


def test_locf_examples():
    nan = float("nan")
    assert [v for _, v in impute_locf([(1, 5.0), (2, nan), (3, None)], 0.0)] == [5.0, 5.0, 5.0]
    assert [v for _, v in impute_locf([(1, nan), (2, 7.0)], 3.0)] == [3.0, 7.0]
    full = [(1, 1.0), (2, 2.0), (4, -1.0)]
    assert impute_locf(full, 9.0) == full


@given(st.lists(st.one_of(st.none(), finite), max_size=30), finite)
def test_locf_idempotent_and_complete(vals, fallback):
    series = [(float(i), v) for i, v in enumerate(vals)]
    once = impute_locf(series, fallback)
    assert impute_locf(once, fallback) == once
    assert all(v is not None and not math.isnan(v) for _, v in once)
    assert [t for t, _ in once] == [t for t, _ in series]


# -- cohort preprocessing -------------------------------------------------

def _cohort_with_missing(n=20, missing=5):
    pts = []
    for i in range(n):
        s = {"a": ([1.0, 2.0], [1.0, 2.0])}
        if i >= missing:
            s["b"] = ([1.0], [3.0])
        else:
            s["b"] = ([1.0], [np.nan])
        pts.append(patient(f"p{i}", s))
    return TrajectoryCohort(pts, ["a", "b"])


def test_drop_sparse_variables():
    c = _cohort_with_missing(20, 5)  # b missing for 25% of patients
    assert missing_fractions(c) == {"a": 0.0, "b": 0.25}
    kept = drop_sparse_variables(c, 0.20)
    assert kept.variable_names == ["a"]
    assert all(set(p.series) == {"a"} for p in kept.patients)
    assert drop_sparse_variables(c, 0.999).variable_names == ["a", "b"]
    with pytest.raises(ValueError):
        drop_sparse_variables(c, 1.0)


def test_drop_all_variables_is_an_error():
    c = TrajectoryCohort([patient("p0", {"a": ([1.0], [np.nan])})], ["a"])
    with pytest.raises(UnusableCohortError):
        drop_sparse_variables(c)


def test_cohort_locf_uses_variable_mean():
    c = TrajectoryCohort([
        patient("p0", {"a": ([1.0, 2.0], [np.nan, 4.0])}),
        patient("p1", {"a": ([1.0, 2.0], [2.0, np.nan])}),
    ], ["a"])
    out = impute_cohort_locf(c)
    assert out.patients[0].series["a"][1].tolist() == [3.0, 4.0]
    assert out.patients[1].series["a"][1].tolist() == [2.0, 2.0]


def test_pooled_outlier_cleaning():
    vals = [[1.0, 2.0, 3.0], [2.0, 3.0, 1000.0]]
    c = TrajectoryCohort([patient(f"p{i}", {"a": ([1.0, 2.0, 3.0], v)}) for i, v in enumerate(vals)], ["a"])
    out = clean_cohort_outliers(c)
    assert out.patients[0].series["a"][1].tolist() == [1.0, 2.0, 3.0]
    assert out.patients[1].series["a"][0].tolist() == [1.0, 2.0]


# -- stages ---------------------------------------------------------------

def test_stage_boundaries_validation():
    with pytest.raises(ValueError):
        StageBoundaries((0.0, 10.0), (9.0, 12.0), None)
    with pytest.raises(ValueError):
        StageBoundaries((5.0, 1.0), None, None)
    b = StageBoundaries((0.0, 4.0), (math.nan, math.nan), (6.0, 9.0))
    assert b.window("intra") is None and b.end == 9.0


def test_parse_stage():
    assert parse_stage("intra+") == ("intra", True)
    assert parse_stage("post") == ("post", False)
    with pytest.raises(ValueError):
        parse_stage("peri")


def test_slice_stage_examples():
    p = patient("p", {"a": ([1.0, 5.0, 10.0], [1.0, 2.0, 3.0])})
    assert slice_stage(p, "intra")["a"].size == 0
    assert slice_stage(p, "intra", True)["a"].tolist() == [1.0, 2.0, 3.0]
    q = patient("q", {"a": ([10.0, 12.0, 14.0, 20.0], [1.0, 2.0, 3.0, 4.0])})
    # 14.0 closes intra and opens post: it belongs to intra
    assert slice_stage(q, "intra")["a"].tolist() == [2.0, 3.0]
    assert slice_stage(q, "intra", True)["a"].tolist() == [1.0, 2.0, 3.0]
    assert slice_stage(q, "post")["a"].tolist() == [4.0]
    assert slice_stage(q, "pre")["a"].tolist() == [1.0]


def test_absent_stage_gives_empty_slices():
    p = patient("p", {"a": ([1.0, 20.0], [1.0, 2.0])}, stages=StageBoundaries((0.0, 10.0), None, (14.0, 48.0)))
    assert slice_stage(p, "intra")["a"].size == 0
    assert slice_stage(p, "intra", True)["a"].size == 0


def _three_var_cohort():
    pts = [
        patient("p0", {"a": ([1.0, 2.0], [1.0, 3.0]), "b": ([3.0], [5.0]), "c": ([4.0], [0.0])}, [(50, 0), (60, 1)]),
        patient("p1", {"a": ([1.0], [2.0]), "b": ([2.0, 8.0], [1.0, 2.0]), "c": ([5.0], [1.0])}, [(50, 0)]),
    ]
    return TrajectoryCohort(pts, ["a", "b", "c"])


def test_design_matrix_shape_and_names():
    c = _three_var_cohort()
    m = build_design_matrix(c, "pre")
    assert m.features.shape == (2, 18)
    assert m.feature_names == design_column_names(["a", "b", "c"])
    assert m.feature_names[:7] == ["a__rmin", "a__rmax", "a__median", "a__mean", "a__mad", "a__nobs", "b__rmin"]
    assert m.labels.tolist() == [1, 0]


def test_design_matrix_stage_vs_cumulative():
    c = _three_var_cohort()
    intra = build_design_matrix(c, "intra")
    cum = build_design_matrix(c, "intra", cumulative=True)
    assert np.isnan(intra.features[:, [i for i in range(18) if i % 6 != 5]]).all()
    assert (intra.features[:, 5::6] == 0).all()
    assert np.isfinite(cum.features).all()
    assert (~np.isnan(cum.features)).sum() >= (~np.isnan(intra.features)).sum()


def test_design_row_is_composition():
    c = _three_var_cohort()
    m = build_design_matrix(c, "pre")
    sl = slice_stage(c.patients[1], "pre")
    want = sum((abstract_distribution(sl[v]).as_row() for v in ["a", "b", "c"]), [])
    assert np.array_equal(m.features[1], np.array(want))


def test_design_matrix_statics_and_errors():
    c = _three_var_cohort()
    m = build_design_matrix(c, "pre", static_features={"p0": [1.0, 60.0], "p1": [0.0, 70.0]},
                            static_names=["sex", "age"])
    assert m.features.shape == (2, 2 + 18)
    assert m.feature_names[:2] == ["sex", "age"]
    with pytest.raises(KeyError):
        build_design_matrix(c, "pre", static_features={"p0": [1.0, 2.0]}, static_names=["sex", "age"])
    bad = TrajectoryCohort([patient("p", {"a": ([1.0], [1.0])}, outcomes=())], ["a"])
    with pytest.raises(UnlabeledPatientError):
        build_design_matrix(bad, "pre")


@given(st.integers(1, 6), st.integers(0, 3), st.integers(0, 2**32 - 1))
def test_design_matrix_size_property(n_pat, n_static, seed):
    rng = np.random.default_rng(seed)
    pts = []
    for i in range(n_pat):
        series = {}
        for v in ("a", "b"):
            k = int(rng.integers(0, 4))
            series[v] = (np.sort(rng.uniform(0, 48, k)), rng.standard_normal(k))
        pts.append(patient(f"p{i}", series))
    c = TrajectoryCohort(pts, ["a", "b"])
    statics = {f"p{i}": list(rng.standard_normal(n_static)) for i in range(n_pat)}
    names = [f"s{j}" for j in range(n_static)]
    for stage in ("pre", "intra", "post"):
        m = build_design_matrix(c, stage, bool(rng.integers(2)), statics, names)
        assert m.features.shape == (n_pat, n_static + 12)


def test_impute_column_means():
    x = np.array([[1.0, np.nan, np.nan], [3.0, 2.0, np.nan]])
    out = impute_column_means(x)
    assert out.tolist() == [[1.0, 2.0, 0.0], [3.0, 2.0, 0.0]]
    assert np.isnan(x).sum() == 3  # input untouched


def test_unsorted_series_rejected():
    with pytest.raises(ValueError):
        patient("p", {"a": ([2.0, 1.0], [1.0, 2.0])})


def test_trajectory_fixture_and_preprocess():
    c = generate_trajectories(n_patients=30, seed=4)
    assert len(c) == 30 and c.variable_names == ["signal", "noise0", "noise1"]
    again = generate_trajectories(n_patients=30, seed=4)
    assert np.array_equal(c.patients[3].series["signal"][1], again.patients[3].series["signal"][1])
    pp = preprocess(c)
    assert pp.variable_names == c.variable_names
    m = build_design_matrix(pp, "post", True)
    assert m.features.shape == (30, 18)
