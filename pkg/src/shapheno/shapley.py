"""Personalized Shapley explanations for boosted tree ensembles.

Attributions live in margin (log-odds) space, where they add up exactly:
``base_value + values.sum() == margin(x)``.

:func:`tree_shap` is the path-dependent variant: a feature that is "absent"
is integrated out by following both children weighted by the number of
training rows that reached them.  Each leaf contributes a product game over
the distinct features on its root path, whose Shapley values are computed
in closed form with a small polynomial recursion vectorised over rows.

The enumeration oracles (:func:`exact_shapley_oracle`,
:func:`path_dependent_oracle`) sum over all ``2**P`` coalitions and exist to
validate the fast path.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .models.gbm import GbmModel, RegressionTree
from .syncohort import Cohort

MAX_ORACLE_FEATURES = 15


@dataclass
class ShapVector:
    values: np.ndarray
    base_value: float


@dataclass
class ShapMatrix:
    values: np.ndarray
    base_values: np.ndarray
    feature_names: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.base_values = np.broadcast_to(
            np.asarray(self.base_values, dtype=float), (self.values.shape[0],)
        ).copy()
        if self.values.shape[1] != len(self.feature_names):
            raise ValueError("feature_names does not match the number of columns")

    def __len__(self):
        return self.values.shape[0]

    def row(self, i: int) -> ShapVector:
        return ShapVector(self.values[i].copy(), float(self.base_values[i]))

    def subset(self, rows) -> "ShapMatrix":
        rows = np.asarray(rows)
        return ShapMatrix(self.values[rows], self.base_values[rows], list(self.feature_names))


# -- fast path -------------------------------------------------------------

def _check_tree(tree: RegressionTree):
    if np.any(tree.count <= 0) or np.any(tree.cover <= 0):
        raise ValueError("corrupt model: node with zero cover")


def _leaf_paths(tree: RegressionTree):
    """Yield ``(leaf, [(node, went_left), ...])`` in preorder."""
    stack = [(0, [])]
    while stack:
        node, path = stack.pop()
        if tree.feature[node] < 0:
            yield node, path
            continue
        stack.append((tree.right[node], path + [(node, False)]))
        stack.append((tree.left[node], path + [(node, True)]))


def _shapley_weights(u: int) -> np.ndarray:
    """w[s] = s! (u - s - 1)! / u! for coalition sizes s = 0 .. u-1."""
    return np.array([math.factorial(s) * math.factorial(u - s - 1) / math.factorial(u) for s in range(u)])


def tree_contributions(tree: RegressionTree, X: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-row path-dependent SHAP values of one tree (unscaled) and its expectation."""
    _check_tree(tree)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, P = X.shape
    phi = np.zeros((n, P))
    expected = 0.0
    for leaf, path in _leaf_paths(tree):
        v = tree.value[leaf]
        zero: dict[int, float] = {}
        one: dict[int, np.ndarray] = {}
        for node, went_left in path:
            f = int(tree.feature[node])
            child = tree.left[node] if went_left else tree.right[node]
            col = X[:, f]
            goes = np.where(np.isnan(col), tree.default_left[node], col < tree.threshold[node])
            hit = goes if went_left else ~goes
            zero[f] = zero.get(f, 1.0) * tree.count[child] / tree.count[node]
            one[f] = one.get(f, np.ones(n, dtype=bool)) & hit
        feats = list(zero)
        expected += v * math.prod(zero.values())
        u = len(feats)
        if u == 0 or v == 0.0:
            continue
        w = _shapley_weights(u)
        o = {f: one[f].astype(float) for f in feats}
        for j in feats:
            # coefficients of sum_{S subset rest} prod_S o prod_{rest \ S} z, by |S|
            coeff = [np.ones(n)]
            for k in feats:
                if k == j:
                    continue
                nxt = [c * zero[k] for c in coeff] + [np.zeros(n)]
                for s, c in enumerate(coeff):
                    nxt[s + 1] = nxt[s + 1] + c * o[k]
                coeff = nxt
            total = sum(w[s] * c for s, c in enumerate(coeff))
            phi[:, j] += v * (o[j] - zero[j]) * total
    return phi, expected


def ensemble_contributions(model: GbmModel, X: np.ndarray) -> tuple[np.ndarray, float]:
    X = model._check(X)
    phi = np.zeros(X.shape)
    base = model.base_margin
    for tree in model.trees:
        t_phi, t_exp = tree_contributions(tree, X)
        phi += model.learning_rate * t_phi
        base += model.learning_rate * t_exp
    return phi, base


def tree_shap(model: GbmModel, x) -> ShapVector:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("tree_shap explains one feature vector; use build_shap_matrix for many")
    phi, base = ensemble_contributions(model, x[None, :])
    return ShapVector(phi[0], float(base))


def build_shap_matrix(model: GbmModel, cohort: Cohort) -> ShapMatrix:
    if cohort.n_features != model.n_features:
        raise ValueError(f"cohort has {cohort.n_features} features, model expects {model.n_features}")
    phi, base = ensemble_contributions(model, cohort.features)
    return ShapMatrix(phi, np.full(phi.shape[0], base), list(cohort.feature_names))


def global_importance(matrix: ShapMatrix, rows=None) -> list[tuple[str, float]]:
    """Features ranked by mean absolute attribution; ties keep column order."""
    vals = matrix.values if rows is None else matrix.values[np.asarray(rows, dtype=int)]
    if vals.shape[0] == 0:
        raise ValueError("no rows to rank")
    score = np.abs(vals).mean(axis=0)
    order = np.argsort(-score, kind="stable")
    return [(matrix.feature_names[i], float(score[i])) for i in order]


# -- enumeration oracles ---------------------------------------------------

def shapley_from_game(values: np.ndarray, n_players: int) -> np.ndarray:
    """Exact Shapley values of a game given as ``values[mask]`` over all bitmasks."""
    P = n_players
    values = np.asarray(values, dtype=float)
    if values.shape[0] != 1 << P:
        raise ValueError("need one value per coalition")
    phi = np.zeros(P)
    fact = [math.factorial(i) for i in range(P + 1)]
    for j in range(P):
        bit = 1 << j
        acc = 0.0
        for mask in range(1 << P):
            if mask & bit:
                continue
            s = bin(mask).count("1")
            acc += fact[s] * fact[P - s - 1] / fact[P] * (values[mask | bit] - values[mask])
        phi[j] = acc
    return phi


def _check_players(P: int):
    if P > MAX_ORACLE_FEATURES:
        raise ValueError(f"exact enumeration supports at most {MAX_ORACLE_FEATURES} features, got {P}")


def exact_shapley_oracle(
    predict: Callable[[np.ndarray], np.ndarray],
    x,
    background,
) -> ShapVector:
    """Interventional Shapley values by full coalition enumeration.

    ``v(S)`` is the mean of ``predict`` over background rows with the
    features in ``S`` overwritten by ``x``.
    """
    x = np.asarray(x, dtype=float)
    B = np.atleast_2d(np.asarray(background, dtype=float))
    P = x.size
    _check_players(P)
    values = np.empty(1 << P)
    for mask in range(1 << P):
        present = np.array([(mask >> j) & 1 for j in range(P)], dtype=bool)
        hybrid = B.copy()
        hybrid[:, present] = x[present]
        values[mask] = float(np.mean(predict(hybrid)))
    return ShapVector(shapley_from_game(values, P), float(values[0]))


def _tree_conditional(tree: RegressionTree, x: np.ndarray, present: np.ndarray, node: int = 0) -> float:
    if tree.feature[node] < 0:
        return float(tree.value[node])
    f = tree.feature[node]
    l, r = tree.left[node], tree.right[node]
    if present[f]:
        return _tree_conditional(tree, x, present, l if tree.go_left(node, x[f]) else r)
    c = tree.count
    return (c[l] * _tree_conditional(tree, x, present, l)
            + c[r] * _tree_conditional(tree, x, present, r)) / c[node]


def path_dependent_value(model: GbmModel, x, present) -> float:
    """Margin with absent features integrated out along training covers."""
    x = np.asarray(x, dtype=float)
    present = np.asarray(present, dtype=bool)
    out = model.base_margin
    for tree in model.trees:
        _check_tree(tree)
        out += model.learning_rate * _tree_conditional(tree, x, present)
    return out


def path_dependent_oracle(model: GbmModel, x) -> ShapVector:
    x = np.asarray(x, dtype=float)
    P = x.size
    _check_players(P)
    values = np.empty(1 << P)
    for mask, bits in enumerate(itertools.product((False, True), repeat=P)):
        # itertools.product runs the last position fastest; reverse to match bit j
        values[mask] = path_dependent_value(model, x, np.array(bits[::-1]))
    return ShapVector(shapley_from_game(values, P), float(values[0]))
