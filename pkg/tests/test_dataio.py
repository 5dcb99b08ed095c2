import math

import numpy as np
import pytest

from shapheno import dataio
from shapheno.dataio import SchemaError
from shapheno.embed import Embedding2D
from shapheno.models.linear import train_logreg
from shapheno.phenoclust import cut_tree, ward_cluster
from shapheno.shapley import build_shap_matrix
from shapheno.syncohort import SyntheticConfig, generate_cohort, generate_trajectories


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


# -- cohort CSV ------------------------------------------------------------

def test_cohort_round_trip_exact(tmp_path):
    c = generate_cohort(SyntheticConfig(n_samples=120, seed=2))
    p = dataio.write_cohort_csv(c, tmp_path / "c.csv", provenance="abc")
    back = dataio.read_cohort_csv(p)
    assert back.features.tobytes() == c.features.tobytes()
    assert back.labels.tolist() == c.labels.tolist()
    assert back.phenotype.tolist() == c.phenotype.tolist()
    assert back.feature_names == c.feature_names
    assert dataio.read_provenance(p) == "abc"


def test_cohort_missing_values_are_empty_fields(tmp_path):
    p = write(tmp_path / "m.csv", "a,b,label\n1.5,,1\n,2,0\n")
    c = dataio.read_cohort_csv(p)
    assert np.isnan(c.features[0, 1]) and np.isnan(c.features[1, 0])
    assert c.phenotype is None


def test_17_digit_formatting():
    for v in (0.1, 1 / 3, 2.0 ** -1074, 1e308, -0.0):
        assert float(dataio.fmt_float(v)) == v


@pytest.mark.parametrize("text, kind, line, column", [
    ("a,b\n1,2\n", "missing-column", 1, "label"),
    ("a,label\n1,0\n2,2\n", "bad-type", 3, "label"),
    ("a,label\nx,0\n", "bad-type", 2, "a"),
    ("a,label\ninf,1\n", "non-finite", 2, "a"),
    ("a,a,label\n1,2,0\n", "duplicate-id", 1, "a"),
    ("# note\na,label\n1,1,1\n", "bad-type", 3, "label"),
])
def test_cohort_schema_errors(tmp_path, text, kind, line, column):
    p = write(tmp_path / "bad.csv", text)
    before = p.read_bytes()
    with pytest.raises(SchemaError) as err:
        dataio.read_cohort_csv(p)
    e = err.value
    assert (e.kind, e.line, e.column) == (kind, line, column)
    assert str(p) in str(e)
    assert p.read_bytes() == before


def test_schema_error_kind_checked():
    with pytest.raises(ValueError):
        SchemaError("f", 1, "c", "weird")


# -- trajectories ----------------------------------------------------------

TRAJ = """patient_id,variable,timestamp,value
p1,hr,1,80
p1,hr,2,
p1,spo2,1.5,97
p2,hr,3,90
p3,hr,12,70
"""
BOUNDS = """patient_id,pre_start,pre_end,intra_start,intra_end,post_start,post_end
p1,0,10,10,14,14,48
p2,0,5,,,6,30
p3,0,10,10,14,14,48
"""
OUT = """patient_id,timestamp,label
p1,50,0
p1,60,1
p2,40,0
p3,50,1
"""


def fixture_dir(tmp_path, traj=TRAJ, bounds=BOUNDS, out=OUT):
    write(tmp_path / "trajectories.csv", traj)
    write(tmp_path / "boundaries.csv", bounds)
    write(tmp_path / "outcomes.csv", out)
    return tmp_path


def test_read_valid_fixture(tmp_path):
    c = dataio.read_trajectories(fixture_dir(tmp_path))
    assert [p.patient_id for p in c.patients] == ["p1", "p2", "p3"]
    assert c.variable_names == ["hr", "spo2"]
    p1 = c.patients[0]
    assert p1.stages.window("intra") == (10.0, 14.0)
    assert np.isnan(p1.series["hr"][1][1])
    assert c.patients[1].stages.window("intra") is None
    assert p1.outcomes == [(50.0, 0), (60.0, 1)]


def test_unsorted_timestamps(tmp_path):
    d = fixture_dir(tmp_path, traj=TRAJ.replace("p1,hr,2,", "p1,hr,0.5,"))
    with pytest.raises(SchemaError) as err:
        dataio.read_trajectories(d)
    assert err.value.kind == "unsorted-timestamps" and err.value.line == 3


def test_patient_without_outcomes(tmp_path):
    d = fixture_dir(tmp_path, out=OUT.replace("p3,50,1\n", ""))
    with pytest.raises(SchemaError) as err:
        dataio.read_trajectories(d)
    assert err.value.kind == "missing-id" and "p3" in str(err.value)


def test_unknown_patient_in_series(tmp_path):
    d = fixture_dir(tmp_path, traj=TRAJ + "p9,hr,1,1\n")
    with pytest.raises(SchemaError) as err:
        dataio.read_trajectories(d)
    assert err.value.kind == "missing-id" and err.value.line == 7


def test_duplicate_boundary_row(tmp_path):
    d = fixture_dir(tmp_path, bounds=BOUNDS + "p1,0,10,10,14,14,48\n")
    with pytest.raises(SchemaError) as err:
        dataio.read_trajectories(d)
    assert err.value.kind == "duplicate-id" and err.value.line == 5


@pytest.mark.parametrize("row", ["p1,0,10,9,14,14,48", "p1,0,10,10,,14,48", "p1,5,1,,,,"])
def test_boundary_order(tmp_path, row):
    d = fixture_dir(tmp_path, bounds=BOUNDS.replace("p1,0,10,10,14,14,48", row))
    with pytest.raises(SchemaError) as err:
        dataio.read_trajectories(d)
    assert err.value.kind == "boundary-order" and err.value.line == 2


def test_trajectory_round_trip(tmp_path):
    c = generate_trajectories(n_patients=8, seed=1)
    dataio.write_trajectories(c, tmp_path)
    back = dataio.read_trajectories(tmp_path)
    assert back.variable_names == c.variable_names
    for a, b in zip(c.patients, back.patients):
        assert a.patient_id == b.patient_id and a.stages == b.stages and a.outcomes == b.outcomes
        for v in c.variable_names:
            assert np.array_equal(a.series[v][0], b.series[v][0])
            assert np.array_equal(a.series[v][1], b.series[v][1])


def test_statics_round_trip(tmp_path):
    p = dataio.write_statics_csv(["age", "sex"], {"p1": [70.0, 1.0], "p2": [55.5, 0.0]}, tmp_path / "s.csv")
    names, vals = dataio.read_statics_csv(p)
    assert names == ["age", "sex"] and vals == {"p1": [70.0, 1.0], "p2": [55.5, 0.0]}
    write(p, "patient_id,age\np1,1\np1,2\n")
    with pytest.raises(SchemaError):
        dataio.read_statics_csv(p)


# -- models and artifacts --------------------------------------------------

def test_gbm_json_round_trip_bit_exact(tmp_path, small_model, small_synthetic):
    p = dataio.save_model(small_model, tmp_path / "m.json", provenance="h")
    back = dataio.load_model(p)
    X = small_synthetic.features
    assert back.decision_function(X).tobytes() == small_model.decision_function(X).tobytes()
    assert back.config == small_model.config
    assert dataio.read_provenance(p) == "h"


def test_linear_json_round_trip(tmp_path, small_synthetic):
    m = train_logreg(small_synthetic, epochs=50)
    back = dataio.load_model(dataio.save_model(m, tmp_path / "l.json"))
    X = small_synthetic.features
    assert back.predict_proba(X).tobytes() == m.predict_proba(X).tobytes()
    with pytest.raises(ValueError):
        dataio.model_from_dict({"kind": "forest"})
    with pytest.raises(TypeError):
        dataio.model_to_dict(object())


def test_shap_and_cluster_artifacts(tmp_path, small_model, small_synthetic):
    sub = small_synthetic.subset(np.arange(40))
    shap = build_shap_matrix(small_model, sub)
    back = dataio.read_shap_csv(dataio.write_shap_csv(shap, tmp_path / "s.csv"))
    assert back.values.tobytes() == shap.values.tobytes()
    assert np.array_equal(back.base_values, shap.base_values)
    tree = ward_cluster(shap.values)
    t2 = dataio.read_dendrogram_csv(dataio.write_dendrogram_csv(tree, tmp_path / "d.csv"))
    assert t2.merges.tobytes() == tree.merges.tobytes()
    a = cut_tree(tree, 3)
    assert np.array_equal(dataio.read_assignment_csv(dataio.write_assignment_csv(a, tmp_path / "a.csv")).labels, a.labels)
    e = Embedding2D(np.random.default_rng(0).standard_normal((40, 2)), "pca")
    ids, xy = dataio.read_embedding_csv(dataio.write_embedding_csv(
        e, tmp_path / "e.csv", clusters=a.labels, phenotype=sub.phenotype, row_ids=np.arange(40) * 2))
    assert ids.tolist() == list(range(0, 80, 2)) and xy.tobytes() == e.coords.tobytes()
    header = (tmp_path / "e.csv").read_text().splitlines()[0]
    assert header == "row_id,x,y,cluster,phenotype"


def test_json_helpers(tmp_path):
    obj = {"b": np.float64(1.5), "a": [np.int64(2), math.nan, np.inf], "c": np.array([True, False])}
    text = dataio.canonical_json(obj)
    assert text.index('"a"') < text.index('"b"')
    assert dataio.to_jsonable(obj)["a"] == [2, None, None]
    p = dataio.write_json(obj, tmp_path / "x.json")
    assert dataio.read_json(p)["c"] == [True, False]
    assert dataio.sha256_of({"x": 1, "y": 2}) == dataio.sha256_of({"y": 2, "x": 1})
    with pytest.raises(TypeError):
        dataio.to_jsonable(object())
