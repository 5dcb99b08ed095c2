"""Second-order gradient boosting of regression trees on logistic loss."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from ..syncohort import Cohort

_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 300
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_leaf: int = 5
    l2_leaf: float = 1.0
    subsample_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("n_trees >= 0, max_depth >= 1 and min_samples_leaf >= 1 required")
        if self.learning_rate <= 0 or self.l2_leaf < 0:
            raise ValueError("learning_rate must be positive and l2_leaf non-negative")
        if not 0 < self.subsample_fraction <= 1:
            raise ValueError("subsample_fraction must lie in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def log_loss(y, p) -> float:
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


@dataclass
class RegressionTree:
    """Array-encoded binary tree.  Node 0 is the root; leaves have ``feature == -1``.

    ``value`` is the Newton leaf weight (margin units) at leaves and 0 at
    internal nodes.  ``cover`` is the hessian sum and ``count`` the number of
    training rows reaching each node; ``node_value`` is the mean training
    label there.  ``default_left`` routes missing values.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    default_left: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    count: np.ndarray
    node_value: np.ndarray

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=float)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.default_left = np.asarray(self.default_left, dtype=bool)
        self.value = np.asarray(self.value, dtype=float)
        self.cover = np.asarray(self.cover, dtype=float)
        self.count = np.asarray(self.count, dtype=float)
        self.node_value = np.asarray(self.node_value, dtype=float)

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def go_left(self, node: int, x: float) -> bool:
        if np.isnan(x):
            return bool(self.default_left[node])
        return bool(x < self.threshold[node])

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        n = X.shape[0]
        node = np.zeros(n, dtype=np.int64)
        rows = np.arange(n)
        for _ in range(self.depth):
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            xv = X[rows, np.where(internal, f, 0)]
            left = np.where(np.isnan(xv), self.default_left[node], xv < self.threshold[node])
            node = np.where(internal, np.where(left, self.left[node], self.right[node]), node)
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "default_left": self.default_left.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
            "count": self.count.tolist(),
            "node_value": self.node_value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(**{k: d[k] for k in (
            "feature", "threshold", "left", "right", "default_left",
            "value", "cover", "count", "node_value")})


@dataclass
class GbmModel:
    trees: list[RegressionTree]
    learning_rate: float
    base_margin: float
    feature_names: list[str]
    config: TrainConfig | None = None

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"model expects {self.n_features} features, got {X.shape[1]}")
        return X

    def decision_function(self, X) -> np.ndarray:
        X = self._check(X)
        margin = np.full(X.shape[0], self.base_margin)
        for tree in self.trees:
            margin += self.learning_rate * tree.predict(X)
        return margin

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.decision_function(X))


class _Grower:
    """Exact greedy tree growth on presorted columns."""

    def __init__(self, X, y, config: TrainConfig):
        self.X = X
        self.y = y
        self.cfg = config
        self.has_missing = bool(np.isnan(X).any())
        # NaN sorts last; stable so equal values keep row order
        self.order = np.argsort(X, axis=0, kind="stable").T.copy()

    def grow(self, g, h, rows: np.ndarray) -> RegressionTree:
        n = self.X.shape[0]
        member = np.zeros(n, dtype=bool)
        member[rows] = True
        ordT = self.order
        if rows.size != n:
            ordT = ordT[member[ordT]].reshape(ordT.shape[0], rows.size)
        nodes = []
        self._build(nodes, ordT, g, h, depth=0)
        cols = list(zip(*nodes))
        return RegressionTree(*cols)

    def _build(self, nodes, ordT, g, h, depth) -> int:
        cfg = self.cfg
        idx = ordT[0]
        G, H = g[idx].sum(), h[idx].sum()
        me = len(nodes)
        nodes.append(None)
        leaf = (-1, 0.0, -1, -1, False, -G / (H + cfg.l2_leaf), H, idx.size, self.y[idx].mean())
        split = None
        if depth < cfg.max_depth and idx.size >= 2 * cfg.min_samples_leaf:
            split = self._best_split(ordT, g, h, G, H)
        if split is None:
            nodes[me] = leaf
            return me
        f, thr, miss_left = split
        xv = self.X[:, f]
        n = self.X.shape[0]
        goes_left = np.zeros(n, dtype=bool)
        node_rows = ordT[0]
        col = xv[node_rows]
        goes_left[node_rows] = np.where(np.isnan(col), miss_left, col < thr)
        sel = goes_left[ordT]
        n_left = int(goes_left[node_rows].sum())
        d = ordT.shape[0]
        left_ord = ordT[sel].reshape(d, n_left)
        right_ord = ordT[~sel].reshape(d, idx.size - n_left)
        li = self._build(nodes, left_ord, g, h, depth + 1)
        ri = self._build(nodes, right_ord, g, h, depth + 1)
        nodes[me] = (f, thr, li, ri, miss_left, 0.0, H, idx.size, self.y[idx].mean())
        return me

    def _best_split(self, ordT, g, h, G, H):
        cfg = self.cfg
        lam = cfg.l2_leaf
        msl = cfg.min_samples_leaf
        d, m = ordT.shape
        vals = self.X[ordT, np.arange(d)[:, None]]
        gs = g[ordT].cumsum(axis=1)
        hs = h[ordT].cumsum(axis=1)
        parent = G * G / (H + lam)
        # candidate i splits after sorted position i; both sides need msl rows
        lo, hi = msl - 1, m - msl
        GL, HL = gs[:, lo:hi], hs[:, lo:hi]
        distinct = vals[:, lo + 1:hi + 1] > vals[:, lo:hi]

        gain = _split_gain(GL, HL, G, H, lam)
        gain -= parent
        gain[~distinct] = -np.inf
        flat = int(np.argmax(gain))
        best_gain = gain.flat[flat]
        f, i, miss_left = flat // (hi - lo), lo + flat % (hi - lo), False

        nn = None
        if self.has_missing:
            nn = (~np.isnan(vals)).sum(axis=1)
            n_miss = m - nn
            if n_miss.any():
                # missing values go left: shift left sums and counts by the missing block
                pos = np.arange(m - 1)
                last = np.maximum(nn - 1, 0)
                rows = np.arange(d)
                Gm = np.where(nn > 0, G - gs[rows, last], G)[:, None]
                Hm = np.where(nn > 0, H - hs[rows, last], H)[:, None]
                nL = pos[None, :] + 1 + n_miss[:, None]
                ok = ((n_miss > 0)[:, None] & (pos[None, :] + 1 < nn[:, None])
                      & (vals[:, 1:] > vals[:, :-1]) & (nL >= msl) & (m - nL >= msl))
                alt = _split_gain(gs[:, :-1] + Gm, hs[:, :-1] + Hm, G, H, lam) - parent
                alt[~ok] = -np.inf
                aflat = int(np.argmax(alt))
                if alt.flat[aflat] > best_gain:
                    best_gain = alt.flat[aflat]
                    f, i, miss_left = aflat // (m - 1), aflat % (m - 1), True

        if not best_gain > _MIN_GAIN:
            return None
        a, b = vals[f, i], vals[f, i + 1]
        thr = 0.5 * (a + b)
        if not a < thr:
            thr = b
        if nn is None or nn[f] == m:
            # no missing values seen here: default toward the heavier child
            HLb = hs[f, i]
            miss_left = bool(HLb >= H - HLb)
        return int(f), float(thr), bool(miss_left)


def _split_gain(GL, HL, G, H, lam):
    GR = G - GL
    HR = H - HL
    out = GL * GL
    out /= HL + lam
    GR *= GR
    GR /= HR + lam
    out += GR
    return out


def _check_training_data(cohort: Cohort):
    X = np.asarray(cohort.features, dtype=float)
    y = np.asarray(cohort.labels)
    if X.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    if np.isinf(X).any():
        raise ValueError("features contain infinite values")
    classes = np.unique(y)
    if classes.size < 2 or not set(classes.tolist()) <= {0, 1}:
        raise ValueError(f"labels must contain both classes 0 and 1, got {classes.tolist()}")
    return X, y.astype(float)


def train_gbm(cohort: Cohort, config: TrainConfig = TrainConfig(), callback=None) -> GbmModel:
    """Fit a boosted ensemble; ``callback(round, margin)`` sees training margins."""
    X, y = _check_training_data(cohort)
    n = X.shape[0]
    prevalence = y.mean()
    base = float(np.log(prevalence / (1 - prevalence)))
    rng = np.random.default_rng(config.seed)
    grower = _Grower(X, y, config)
    margin = np.full(n, base)
    trees = []
    all_rows = np.arange(n)
    for r in range(config.n_trees):
        p = sigmoid(margin)
        g = p - y
        h = p * (1 - p)
        if config.subsample_fraction < 1.0:
            k = max(2 * config.min_samples_leaf, int(round(config.subsample_fraction * n)))
            rows = np.sort(rng.choice(n, size=min(k, n), replace=False))
        else:
            rows = all_rows
        tree = grower.grow(g, h, rows)
        trees.append(tree)
        margin = margin + config.learning_rate * tree.predict(X)
        if callback is not None:
            callback(r, margin)
    return GbmModel(trees, config.learning_rate, base, list(cohort.feature_names), config)
