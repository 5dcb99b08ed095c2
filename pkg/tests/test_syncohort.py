import numpy as np
import pytest
from hypothesis import given, strategies as st

from shapheno.syncohort import (
    ALPHA, BETA, DEFAULT_PREDICATES, DELTA, GAMMA, PHENOTYPES, RejectionBudgetExceeded,
    SyntheticConfig, assign_phenotype, generate_cohort, label_of, matching_predicates,
    noisy_features, predicate_features, sample_feature_vector,
)


def vec(**kw):
    x = np.zeros(30)
    for k, v in kw.items():
        x[int(k[1:])] = v
    return x


def test_sample_vector_deterministic_and_sized():
    a = sample_feature_vector(np.random.default_rng(5), 30)
    b = sample_feature_vector(np.random.default_rng(5), 30)
    assert a.shape == (30,)
    assert np.array_equal(a, b)


def test_sample_vector_moments():
    rng = np.random.default_rng(0)
    draws = np.concatenate([sample_feature_vector(rng, 30) for _ in range(3334)])
    assert draws.size >= 10**5
    assert abs(draws.mean()) < 0.02
    assert abs(draws.var() - 1) < 0.05


def test_sample_vector_rejects_empty():
    with pytest.raises(ValueError):
        sample_feature_vector(np.random.default_rng(0), 0)


def test_assign_examples():
    assert assign_phenotype(vec(x1=-1, x2=-1, x3=-1, x10=0.6)) == ALPHA
    assert assign_phenotype(vec(x10=0.6, x11=0.0, x12=0.7, x1=1)) == BETA
    assert assign_phenotype(np.zeros(30)) is None
    both = vec(x1=-1, x2=-1, x3=-1, x10=0.4, x13=0.6, x14=0.3)
    assert matching_predicates(both, DEFAULT_PREDICATES) == [ALPHA, GAMMA]
    assert assign_phenotype(both) is None


def test_assign_gamma_delta_and_boundaries():
    assert assign_phenotype(vec(x13=0.6, x1=1)) == GAMMA
    assert assign_phenotype(vec(x16=0.6, x13=0.0, x1=1)) == DELTA
    # strict inequalities: exactly 0.5 fails x12 > 0.5
    assert assign_phenotype(vec(x10=0.6, x12=0.5, x1=1)) is None
    # x10 = 0.5 satisfies x10 <= 0.5
    assert assign_phenotype(vec(x10=0.5, x13=0.6, x1=1)) == GAMMA


def test_assign_short_vector_raises():
    with pytest.raises(IndexError):
        assign_phenotype(np.zeros(12))


def test_predicate_structure():
    feats = predicate_features()
    assert feats[ALPHA] == {1, 2, 3}
    for ph in (BETA, GAMMA, DELTA):
        assert 10 in feats[ph]
    assert 10 not in feats[ALPHA]
    assert noisy_features(30) == [0, *range(4, 10), *range(17, 30)]


@given(st.lists(st.floats(-3, 3), min_size=30, max_size=30),
       st.lists(st.floats(-3, 3), min_size=30, max_size=30))
def test_rules_read_only_required_features(a, b):
    a, b = np.array(a), np.array(b)
    for p in DEFAULT_PREDICATES:
        mixed = b.copy()
        idx = list(p.required_features)
        mixed[idx] = a[idx]
        assert p(a) == p(mixed)


@given(st.lists(st.floats(-2, 2), min_size=30, max_size=30))
def test_assign_matches_hit_count(x):
    x = np.array(x)
    hits = matching_predicates(x, DEFAULT_PREDICATES)
    got = assign_phenotype(x)
    assert (got is not None) == (len(hits) == 1)
    if got is not None:
        assert got == hits[0]


def test_default_cohort_shape_and_labels(default_cohort):
    c = default_cohort
    assert c.features.shape == (3000, 30)
    assert set(c.phenotype) == set(PHENOTYPES)
    counts = {p: int((c.phenotype == p).sum()) for p in PHENOTYPES}
    assert all(v == 750 for v in counts.values())
    assert np.isfinite(c.features).all()
    assert np.array_equal(c.labels, [label_of(p) for p in c.phenotype])
    assert np.array_equal(c.labels == 0, c.phenotype == ALPHA)


def test_default_cohort_rows_satisfy_their_predicate(default_cohort):
    c = default_cohort
    for x, ph in zip(c.features, c.phenotype):
        hits = matching_predicates(x, DEFAULT_PREDICATES)
        assert len(hits) <= 1
        if ph == ALPHA:
            assert hits in ([], [ALPHA])
        else:
            assert hits == [ph]


def test_literal_reject_policy_reproduces_assign():
    c = generate_cohort(SyntheticConfig(n_samples=400, seed=3, unmatched="reject", balanced=False))
    assert c.n_samples == 400
    for x, ph in zip(c.features, c.phenotype):
        assert assign_phenotype(x) == ph


def test_generation_is_bit_identical():
    a = generate_cohort(SyntheticConfig(n_samples=200, seed=9))
    b = generate_cohort(SyntheticConfig(n_samples=200, seed=9))
    assert a.features.tobytes() == b.features.tobytes()
    assert list(a.phenotype) == list(b.phenotype)
    c = generate_cohort(SyntheticConfig(n_samples=200, seed=10))
    assert not np.array_equal(a.features, c.features)


def test_noise_uncorrelated_with_labels(default_cohort):
    c = default_cohort
    y = c.labels - c.labels.mean()
    for j in noisy_features(30):
        x = c.features[:, j] - c.features[:, j].mean()
        r = (x @ y) / np.sqrt((x @ x) * (y @ y))
        assert abs(r) < 0.06, (j, r)


def test_rejection_budget():
    with pytest.raises(RejectionBudgetExceeded):
        generate_cohort(SyntheticConfig(n_samples=400, max_rejections=3))


@pytest.mark.parametrize("kw", [
    {"n_features": 16}, {"n_samples": 0}, {"unmatched": "keep"}, {"seed": -1},
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SyntheticConfig(**kw)


def test_cohort_subset_and_select(small_synthetic):
    s = small_synthetic.subset([0, 2])
    assert s.n_samples == 2 and s.phenotype.shape == (2,)
    t = small_synthetic.select_features([12, 10])
    assert t.feature_names == ["x12", "x10"]
    assert np.array_equal(t.features[:, 1], small_synthetic.features[:, 10])
