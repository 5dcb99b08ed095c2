"""CSV and JSON readers and writers with strict validation.

CSV files are UTF-8, comma separated, RFC-4180 quoted.  Floats are written
with 17 significant digits, so reading back reproduces every float64
exactly; missing values are empty fields.  Writers can prefix a
``# config_sha256=<hex>`` comment line, and readers skip ``#`` lines.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .embed import Embedding2D
from .models.gbm import GbmModel, RegressionTree, TrainConfig
from .models.linear import LinearModel
from .phenoclust import ClusterAssignment, Dendrogram
from .shapley import ShapMatrix
from .syncohort import Cohort
from .temporal import STAGES, PatientTrajectory, StageBoundaries, TrajectoryCohort

SCHEMA_ERROR_KINDS = (
    "missing-column", "bad-type", "unsorted-timestamps", "duplicate-id",
    "missing-id", "non-finite", "boundary-order",
)
PROVENANCE_KEY = "config_sha256"

TRAJECTORY_COLUMNS = ("patient_id", "variable", "timestamp", "value")
BOUNDARY_COLUMNS = ("patient_id", "pre_start", "pre_end", "intra_start", "intra_end", "post_start", "post_end")
OUTCOME_COLUMNS = ("patient_id", "timestamp", "label")


class SchemaError(ValueError):
    def __init__(self, file, line: int | None, column: str | None, kind: str, detail: str = ""):
        if kind not in SCHEMA_ERROR_KINDS:
            raise ValueError(f"unknown schema error kind {kind!r}")
        self.file = str(file)
        self.line = line
        self.column = column
        self.kind = kind
        self.detail = detail
        where = self.file + (f":{line}" if line is not None else "")
        col = f" column {column!r}" if column is not None else ""
        super().__init__(f"{where}:{col} {kind}" + (f" ({detail})" if detail else ""))


# -- low-level helpers -----------------------------------------------------

def fmt_float(v: float) -> str:
    v = float(v)
    if math.isnan(v):
        return ""
    return format(v, ".17g")


def _open_writer(path, provenance: str | None):
    path = Path(path)
    fh = path.open("w", encoding="utf-8", newline="")
    if provenance is not None:
        fh.write(f"# {PROVENANCE_KEY}={provenance}\n")
    return fh, csv.writer(fh, lineterminator="\n")


def read_provenance(path) -> str | None:
    """The config hash embedded in a CSV, JSON or SVG artifact, if any."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        try:
            return json.loads(text).get(PROVENANCE_KEY)
        except (ValueError, AttributeError):
            return None
    marker = f"{PROVENANCE_KEY}="
    for line in text.splitlines()[:3]:
        if marker in line:
            return line.split(marker, 1)[1].split()[0].strip("-> ")
    return None


class _Table:
    """Rows of a CSV with their physical line numbers; ``#`` lines skipped."""

    def __init__(self, path, required: Sequence[str] = ()):
        self.path = Path(path)
        with self.path.open("r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            self.header = None
            self.rows: list[tuple[int, list[str]]] = []
            for row in reader:
                if not row or (row[0].startswith("#") and len(row) >= 1):
                    continue
                if self.header is None:
                    self.header = [c.strip() for c in row]
                    self.header_line = reader.line_num
                    continue
                self.rows.append((reader.line_num, row))
        if self.header is None:
            raise SchemaError(self.path, 1, required[0] if required else None, "missing-column", "empty file")
        seen = set()
        for name in self.header:
            if name in seen:
                raise SchemaError(self.path, self.header_line, name, "duplicate-id", "repeated column name")
            seen.add(name)
        for name in required:
            if name not in seen:
                raise SchemaError(self.path, self.header_line, name, "missing-column")
        self.index = {name: i for i, name in enumerate(self.header)}
        for line, row in self.rows:
            if len(row) != len(self.header):
                col = self.header[min(len(row), len(self.header) - 1)]
                raise SchemaError(self.path, line, col, "bad-type",
                                  f"expected {len(self.header)} fields, found {len(row)}")

    def float_at(self, line: int, row: list[str], col: str, allow_missing: bool = True) -> float:
        raw = row[self.index[col]].strip()
        if raw == "":
            if allow_missing:
                return math.nan
            raise SchemaError(self.path, line, col, "bad-type", "empty value")
        try:
            v = float(raw)
        except ValueError:
            raise SchemaError(self.path, line, col, "bad-type", f"not a number: {raw!r}") from None
        if not math.isfinite(v):
            raise SchemaError(self.path, line, col, "non-finite", raw)
        return v

    def label_at(self, line: int, row: list[str], col: str = "label") -> int:
        raw = row[self.index[col]].strip()
        if raw not in ("0", "1"):
            raise SchemaError(self.path, line, col, "bad-type", f"label must be 0 or 1, got {raw!r}")
        return int(raw)

    def str_at(self, line: int, row: list[str], col: str) -> str:
        raw = row[self.index[col]].strip()
        if raw == "":
            raise SchemaError(self.path, line, col, "bad-type", "empty identifier")
        return raw


# -- cohorts ---------------------------------------------------------------

def write_cohort_csv(cohort: Cohort, path, provenance: str | None = None) -> Path:
    fh, w = _open_writer(path, provenance)
    with fh:
        header = list(cohort.feature_names) + ["label"]
        if cohort.phenotype is not None:
            header.append("phenotype")
        w.writerow(header)
        for i in range(cohort.n_samples):
            row = [fmt_float(v) for v in cohort.features[i]] + [str(int(cohort.labels[i]))]
            if cohort.phenotype is not None:
                row.append(str(cohort.phenotype[i]))
            w.writerow(row)
    return Path(path)


def read_cohort_csv(path) -> Cohort:
    t = _Table(path, required=("label",))
    names = [c for c in t.header if c not in ("label", "phenotype")]
    has_pheno = "phenotype" in t.index
    X = np.empty((len(t.rows), len(names)))
    y = np.empty(len(t.rows), dtype=int)
    pheno = []
    for r, (line, row) in enumerate(t.rows):
        for c, name in enumerate(names):
            X[r, c] = t.float_at(line, row, name)
        y[r] = t.label_at(line, row)
        if has_pheno:
            pheno.append(row[t.index["phenotype"]].strip())
    return Cohort(X, y, names, np.array(pheno, dtype=object) if has_pheno else None)


# -- trajectories ----------------------------------------------------------

def trajectory_paths(directory) -> tuple[Path, Path, Path]:
    d = Path(directory)
    return d / "trajectories.csv", d / "boundaries.csv", d / "outcomes.csv"


def write_trajectories(cohort: TrajectoryCohort, paths, provenance: str | None = None) -> tuple[Path, Path, Path]:
    """Write long-format series, stage boundaries and outcomes.

    ``paths`` is a directory or a ``(trajectories, boundaries, outcomes)`` triple.
    """
    if isinstance(paths, (str, Path)):
        paths = trajectory_paths(paths)
    tp, bp, op = (Path(p) for p in paths)
    fh, w = _open_writer(tp, provenance)
    with fh:
        w.writerow(TRAJECTORY_COLUMNS)
        for p in cohort.patients:
            for var in cohort.variable_names:
                if var not in p.series:
                    continue
                for ti, vi in zip(*p.series[var]):
                    w.writerow([p.patient_id, var, fmt_float(ti), fmt_float(vi)])
    fh, w = _open_writer(bp, provenance)
    with fh:
        w.writerow(BOUNDARY_COLUMNS)
        for p in cohort.patients:
            row = [p.patient_id]
            for s in STAGES:
                win = p.stages.window(s)
                row += ["", ""] if win is None else [fmt_float(win[0]), fmt_float(win[1])]
            w.writerow(row)
    fh, w = _open_writer(op, provenance)
    with fh:
        w.writerow(OUTCOME_COLUMNS)
        for p in cohort.patients:
            for ti, yi in p.outcomes:
                w.writerow([p.patient_id, fmt_float(ti), str(int(yi))])
    return tp, bp, op


def read_trajectories(paths) -> TrajectoryCohort:
    """Assemble a cohort from the three trajectory CSVs.

    Patients are taken from the boundaries file, in file order; every one
    must have outcomes, and no other file may mention unknown patients.
    Timestamps must be non-decreasing per (patient, variable) and per
    patient in the outcomes file.
    """
    if isinstance(paths, (str, Path)):
        paths = trajectory_paths(paths)
    tp, bp, op = (Path(p) for p in paths)

    bt = _Table(bp, BOUNDARY_COLUMNS)
    stages: dict[str, StageBoundaries] = {}
    first_line: dict[str, int] = {}
    for line, row in bt.rows:
        pid = bt.str_at(line, row, "patient_id")
        if pid in stages:
            raise SchemaError(bp, line, "patient_id", "duplicate-id",
                              f"{pid} already defined on line {first_line[pid]}")
        wins = []
        for s in STAGES:
            a = bt.float_at(line, row, f"{s}_start")
            b = bt.float_at(line, row, f"{s}_end")
            if math.isnan(a) != math.isnan(b):
                raise SchemaError(bp, line, f"{s}_end" if math.isnan(b) else f"{s}_start",
                                  "boundary-order", "a stage needs both start and end")
            wins.append(None if math.isnan(a) else (a, b))
        try:
            stages[pid] = StageBoundaries(*wins)
        except ValueError as exc:
            raise SchemaError(bp, line, None, "boundary-order", str(exc)) from None
        first_line[pid] = line

    ot = _Table(op, OUTCOME_COLUMNS)
    outcomes: dict[str, list[tuple[float, int]]] = {}
    for line, row in ot.rows:
        pid = ot.str_at(line, row, "patient_id")
        if pid not in stages:
            raise SchemaError(op, line, "patient_id", "missing-id", f"{pid} has no stage boundaries")
        ts = ot.float_at(line, row, "timestamp", allow_missing=False)
        seq = outcomes.setdefault(pid, [])
        if seq and ts < seq[-1][0]:
            raise SchemaError(op, line, "timestamp", "unsorted-timestamps", f"patient {pid}")
        seq.append((ts, ot.label_at(line, row)))
    for pid in stages:
        if pid not in outcomes:
            raise SchemaError(op, None, "patient_id", "missing-id",
                              f"{pid} (boundaries line {first_line[pid]}) has no outcomes")

    tt = _Table(tp, TRAJECTORY_COLUMNS)
    series: dict[str, dict[str, tuple[list, list]]] = {pid: {} for pid in stages}
    variables: list[str] = []
    for line, row in tt.rows:
        pid = tt.str_at(line, row, "patient_id")
        if pid not in stages:
            raise SchemaError(tp, line, "patient_id", "missing-id", f"{pid} has no stage boundaries")
        var = tt.str_at(line, row, "variable")
        ts = tt.float_at(line, row, "timestamp", allow_missing=False)
        val = tt.float_at(line, row, "value")
        if var not in variables:
            variables.append(var)
        t_list, v_list = series[pid].setdefault(var, ([], []))
        if t_list and ts < t_list[-1]:
            raise SchemaError(tp, line, "timestamp", "unsorted-timestamps", f"patient {pid}, variable {var}")
        t_list.append(ts)
        v_list.append(val)

    patients = [
        PatientTrajectory(
            pid,
            {v: (np.array(t), np.array(x)) for v, (t, x) in series[pid].items()},
            stages[pid],
            outcomes[pid],
        )
        for pid in stages
    ]
    return TrajectoryCohort(patients, variables)


def write_statics_csv(names: Sequence[str], values: dict[str, Sequence[float]], path, provenance=None) -> Path:
    fh, w = _open_writer(path, provenance)
    with fh:
        w.writerow(["patient_id", *names])
        for pid, vals in values.items():
            w.writerow([pid, *(fmt_float(v) for v in vals)])
    return Path(path)


def read_statics_csv(path) -> tuple[list[str], dict[str, list[float]]]:
    """Per-patient static features: ``patient_id`` then one column per feature."""
    t = _Table(path, ("patient_id",))
    names = [c for c in t.header if c != "patient_id"]
    out: dict[str, list[float]] = {}
    for line, row in t.rows:
        pid = t.str_at(line, row, "patient_id")
        if pid in out:
            raise SchemaError(t.path, line, "patient_id", "duplicate-id", pid)
        out[pid] = [t.float_at(line, row, c) for c in names]
    return names, out


# -- models ----------------------------------------------------------------

def model_to_dict(model) -> dict:
    if isinstance(model, GbmModel):
        return {
            "kind": "gbm",
            "feature_names": list(model.feature_names),
            "base_margin": model.base_margin,
            "learning_rate": model.learning_rate,
            "config": None if model.config is None else model.config.to_dict(),
            "trees": [t.to_dict() for t in model.trees],
        }
    if isinstance(model, LinearModel):
        return {
            "kind": "linear",
            "feature_names": list(model.feature_names),
            "weights": model.weights.tolist(),
            "bias": model.bias,
            "mean": model.mean.tolist(),
            "scale": model.scale.tolist(),
        }
    raise TypeError(f"cannot serialise {type(model).__name__}")


def model_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "gbm":
        cfg = d.get("config")
        return GbmModel(
            [RegressionTree.from_dict(t) for t in d["trees"]],
            float(d["learning_rate"]),
            float(d["base_margin"]),
            list(d["feature_names"]),
            None if cfg is None else TrainConfig(**cfg),
        )
    if kind == "linear":
        return LinearModel(
            np.array(d["weights"], dtype=float), float(d["bias"]),
            np.array(d["mean"], dtype=float), np.array(d["scale"], dtype=float),
            list(d["feature_names"]),
        )
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model, path, provenance: str | None = None) -> Path:
    d = model_to_dict(model)
    if provenance is not None:
        d[PROVENANCE_KEY] = provenance
    return write_json(d, path)


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- explanation, clustering and embedding artifacts -----------------------

def write_shap_csv(matrix: ShapMatrix, path, provenance: str | None = None) -> Path:
    fh, w = _open_writer(path, provenance)
    with fh:
        w.writerow(["row_id", *matrix.feature_names, "base_value"])
        for i in range(len(matrix)):
            w.writerow([i, *(fmt_float(v) for v in matrix.values[i]), fmt_float(matrix.base_values[i])])
    return Path(path)


def read_shap_csv(path) -> ShapMatrix:
    t = _Table(path, ("row_id", "base_value"))
    names = [c for c in t.header if c not in ("row_id", "base_value")]
    vals = np.array([[t.float_at(l, r, c, allow_missing=False) for c in names] for l, r in t.rows]).reshape(-1, len(names))
    base = np.array([t.float_at(l, r, "base_value", allow_missing=False) for l, r in t.rows])
    return ShapMatrix(vals, base, names)


def write_dendrogram_csv(tree: Dendrogram, path, provenance: str | None = None) -> Path:
    fh, w = _open_writer(path, provenance)
    with fh:
        w.writerow(["step", "cluster_a", "cluster_b", "height", "size"])
        for i, (a, b, h, s) in enumerate(tree.merges):
            w.writerow([i, int(a), int(b), fmt_float(h), int(s)])
    return Path(path)


def read_dendrogram_csv(path) -> Dendrogram:
    t = _Table(path, ("cluster_a", "cluster_b", "height", "size"))
    merges = np.array([[t.float_at(l, r, c, allow_missing=False) for c in ("cluster_a", "cluster_b", "height", "size")]
                       for l, r in t.rows]).reshape(-1, 4)
    return Dendrogram(merges, merges.shape[0] + 1)


def write_assignment_csv(assignment: ClusterAssignment, path, provenance: str | None = None) -> Path:
    fh, w = _open_writer(path, provenance)
    with fh:
        w.writerow(["row_id", "cluster"])
        for i, c in enumerate(assignment.labels):
            w.writerow([i, int(c)])
    return Path(path)


def read_assignment_csv(path) -> ClusterAssignment:
    t = _Table(path, ("row_id", "cluster"))
    labels = np.array([int(t.float_at(l, r, "cluster", allow_missing=False)) for l, r in t.rows], dtype=int)
    return ClusterAssignment(labels, int(np.unique(labels).size))


def write_embedding_csv(emb: Embedding2D, path, clusters=None, phenotype=None, row_ids=None,
                        provenance: str | None = None) -> Path:
    n = emb.coords.shape[0]
    row_ids = range(n) if row_ids is None else row_ids
    fh, w = _open_writer(path, provenance)
    with fh:
        header = ["row_id", "x", "y"]
        if clusters is not None:
            header.append("cluster")
        if phenotype is not None:
            header.append("phenotype")
        w.writerow(header)
        for i, rid in enumerate(row_ids):
            row = [int(rid), fmt_float(emb.coords[i, 0]), fmt_float(emb.coords[i, 1])]
            if clusters is not None:
                row.append(int(clusters[i]))
            if phenotype is not None:
                row.append(str(phenotype[i]))
            w.writerow(row)
    return Path(path)


def read_embedding_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(row_ids, coords)``."""
    t = _Table(path, ("row_id", "x", "y"))
    ids = np.array([int(t.float_at(l, r, "row_id", allow_missing=False)) for l, r in t.rows], dtype=int)
    xy = np.array([[t.float_at(l, r, c, allow_missing=False) for c in ("x", "y")] for l, r in t.rows]).reshape(-1, 2)
    return ids, xy


# -- JSON ------------------------------------------------------------------

def to_jsonable(obj):
    """Plain JSON types; NaN and infinities become ``null``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    raise TypeError(f"cannot serialise {type(obj).__name__} to JSON")


def canonical_json(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(canonical_json(obj), encoding="utf-8")
    return path


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def sha256_of(obj) -> str:
    """Hash of the canonical JSON encoding (compact, sorted keys)."""
    blob = json.dumps(to_jsonable(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
