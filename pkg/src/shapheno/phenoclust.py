"""Ward agglomerative clustering of explanation (or raw feature) space.

Merge heights are Ward increments ``|a||b| / (|a| + |b|) * ||c_a - c_b||^2``,
so two singletons at distance ``r`` merge at ``r**2 / 2``.  Distances are
updated with the Lance-Williams recurrence and merges are found with the
nearest-neighbour chain, in O(N^2) time and memory.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .shapley import ShapMatrix, build_shap_matrix
from .syncohort import Cohort


@dataclass
class Dendrogram:
    """``merges[i] = (a, b, height, size)`` with leaves ``0..N-1`` and the
    cluster formed by merge ``i`` numbered ``N + i``; heights ascend."""

    merges: np.ndarray
    leaf_count: int

    def __post_init__(self):
        self.merges = np.asarray(self.merges, dtype=float).reshape(-1, 4)
        if self.merges.shape[0] != self.leaf_count - 1:
            raise ValueError("a dendrogram over N leaves has N - 1 merges")

    @property
    def heights(self) -> np.ndarray:
        return self.merges[:, 2]


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    k: int


@dataclass
class CorrectRateReport:
    per_cluster: list[dict]
    overall: float
    k: int

    def to_dict(self) -> dict:
        return {"k": self.k, "overall": self.overall, "per_cluster": self.per_cluster}


def _find(parent: np.ndarray, i: int) -> int:
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        parent[i], i = root, parent[i]
    return root


def ward_cluster(points) -> Dendrogram:
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need an N x P matrix with N >= 2")
    if not np.isfinite(X).all():
        raise ValueError("points contain non-finite values")
    n = X.shape[0]
    D = 0.5 * squareform(pdist(X, "sqeuclidean"))
    np.fill_diagonal(D, np.inf)
    size = np.ones(n)
    active = np.ones(n, dtype=bool)
    raw = []  # (slot_a, slot_b, height) in discovery order
    chain: list[int] = []
    while len(raw) < n - 1:
        if not chain:
            chain.append(int(np.flatnonzero(active)[0]))
        while True:
            a = chain[-1]
            b = int(np.argmin(D[a]))
            if len(chain) > 1 and D[a, chain[-2]] <= D[a, b]:
                b = chain[-2]
            if len(chain) > 1 and b == chain[-2]:
                break
            chain.append(b)
        chain.pop()
        chain.pop()
        lo, hi = min(a, b), max(a, b)
        h = D[lo, hi]
        raw.append((lo, hi, h))
        na, nb = size[lo], size[hi]
        nk = size
        dk = ((na + nk) * D[lo] + (nb + nk) * D[hi] - nk * h) / (na + nb + nk)
        dk[~active] = np.inf
        D[lo, :] = dk
        D[:, lo] = dk
        D[lo, lo] = np.inf
        D[hi, :] = np.inf
        D[:, hi] = np.inf
        active[hi] = False
        size[lo] = na + nb

    order = sorted(range(n - 1), key=lambda i: raw[i][2])
    parent = np.arange(n)
    cluster_of = np.arange(n)  # root leaf -> current cluster id
    count = np.ones(n, dtype=int)
    merges = np.empty((n - 1, 4))
    for step, i in enumerate(order):
        a, b, h = raw[i]
        ra, rb = _find(parent, a), _find(parent, b)
        ca, cb = cluster_of[ra], cluster_of[rb]
        parent[rb] = ra
        count[ra] += count[rb]
        cluster_of[ra] = n + step
        merges[step] = (min(ca, cb), max(ca, cb), h, count[ra])
    return Dendrogram(merges, n)


def cut_tree(dendrogram: Dendrogram, k: int) -> ClusterAssignment:
    """Undo the last ``k - 1`` merges; clusters are numbered 1..k by their
    smallest row index."""
    n = dendrogram.leaf_count
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    parent = np.arange(2 * n - 1)
    for step in range(n - k):
        a, b = int(dendrogram.merges[step, 0]), int(dendrogram.merges[step, 1])
        parent[a] = parent[b] = n + step
    root = np.empty(n, dtype=int)
    for leaf in range(n):
        r = leaf
        while parent[r] != r:
            r = parent[r]
        root[leaf] = r
    labels = np.empty(n, dtype=int)
    seen: dict[int, int] = {}
    for leaf in range(n):
        labels[leaf] = seen.setdefault(int(root[leaf]), len(seen) + 1)
    return ClusterAssignment(labels, k)


def correct_rate(assignment: ClusterAssignment, truth: Sequence) -> CorrectRateReport:
    """Per cluster, the share of members carrying the cluster's modal phenotype."""
    labels = np.asarray(assignment.labels)
    truth = np.asarray(truth, dtype=object)
    if labels.shape[0] != truth.shape[0]:
        raise ValueError("assignment and truth differ in length")
    per_cluster = []
    hits = 0
    for c in np.unique(labels):
        members = truth[labels == c]
        counts = Counter(members.tolist())
        top = max(counts.values())
        modal = min(str(p) for p, v in counts.items() if v == top)
        per_cluster.append({
            "cluster": int(c),
            "majority": modal,
            "cr": top / members.size,
            "size": int(members.size),
        })
        hits += top
    return CorrectRateReport(per_cluster, hits / labels.size, assignment.k)


def zscore(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    sd = X.std(axis=0)
    return (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


@dataclass
class SpaceComparison:
    k: int
    raw: CorrectRateReport
    shap: CorrectRateReport

    def to_dict(self) -> dict:
        return {"k": self.k, "raw": self.raw.to_dict(), "shap": self.shap.to_dict()}


def compare_spaces(cohort: Cohort, shap, ks: Sequence[int] = (2, 3, 4, 5, 6), return_trees: bool = False):
    """Cluster z-scored raw features and unscaled SHAP rows with the same
    settings and score both against the cohort's phenotypes.

    ``shap`` is a :class:`ShapMatrix` or a fitted model to explain the cohort with.
    """
    if cohort.phenotype is None:
        raise ValueError("cohort has no ground-truth phenotypes")
    if not isinstance(shap, ShapMatrix):
        shap = build_shap_matrix(shap, cohort)
    if len(shap) != cohort.n_samples:
        raise ValueError("SHAP matrix and cohort are not row-aligned")
    raw_tree = ward_cluster(zscore(cohort.features))
    shap_tree = ward_cluster(shap.values)
    out = [
        SpaceComparison(
            k,
            correct_rate(cut_tree(raw_tree, k), cohort.phenotype),
            correct_rate(cut_tree(shap_tree, k), cohort.phenotype),
        )
        for k in ks
    ]
    if return_trees:
        return out, raw_tree, shap_tree
    return out
