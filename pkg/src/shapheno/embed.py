"""Two-dimensional views of raw-feature and explanation space.

The embeddings are for looking at; clustering always runs in the full space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
from scipy.spatial.distance import pdist, squareform

MAX_TSNE_POINTS = 10_000


@dataclass
class Embedding2D:
    coords: np.ndarray
    method: str
    params: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        if self.coords.ndim != 2:
            raise ValueError("coords must be an N x d matrix")
        if not np.isfinite(self.coords).all():
            raise ValueError("embedding has non-finite coordinates")


def _as_points(points) -> np.ndarray:
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need an N x P matrix with N >= 2")
    if not np.isfinite(X).all():
        raise ValueError("points contain non-finite values")
    return X


def pca_project(points, dims: int = 2) -> Embedding2D:
    """Project centred rows onto the leading right singular vectors.

    Each component is signed so that its largest-magnitude loading is
    positive.  Components beyond the rank of the data are exactly zero.
    """
    X = _as_points(points)
    Xc = X - X.mean(axis=0)
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    k = min(dims, Vt.shape[0])
    V = Vt[:k].copy()
    rank_tol = s.max(initial=0.0) * max(X.shape) * np.finfo(float).eps
    for c in range(k):
        if s[c] <= rank_tol:
            V[c] = 0.0
            continue
        if V[c, np.argmax(np.abs(V[c]))] < 0:
            V[c] = -V[c]
    coords = np.zeros((X.shape[0], dims))
    coords[:, :k] = Xc @ V.T
    var = np.zeros(dims)
    var[:k] = s[:k] ** 2 / max(X.shape[0] - 1, 1)
    var[:k][s[:k] <= rank_tol] = 0.0
    return Embedding2D(coords, "pca", {"dims": dims, "components": V.tolist(), "explained_variance": var.tolist()})


# -- t-SNE -----------------------------------------------------------------

def _conditional_affinities(D2: np.ndarray, perplexity: float, tol: float = 1e-5, max_steps: int = 200) -> np.ndarray:
    """Row-stochastic Gaussian affinities with per-row entropy log(perplexity).

    Bisection on the precision ``beta`` runs for all rows at once.
    """
    n = D2.shape[0]
    target = np.log(perplexity)
    beta = np.ones(n)
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    off = ~np.eye(n, dtype=bool)
    # shifting by the nearest neighbour distance keeps exp() in range
    d = D2 - np.where(off, D2, np.inf).min(axis=1, keepdims=True)
    P = np.empty_like(D2)
    for _ in range(max_steps):
        np.multiply(d, -beta[:, None], out=P)
        np.exp(P, out=P)
        P[~off] = 0.0
        sP = P.sum(axis=1)
        H = np.log(sP) + beta * (P * d).sum(axis=1) / sP
        diff = H - target
        if np.all(np.abs(diff) < tol):
            break
        up = diff > 0  # entropy too high: sharpen
        lo = np.where(up, beta, lo)
        hi = np.where(up, hi, beta)
        beta = np.where(
            up,
            np.where(np.isinf(hi), beta * 2.0, 0.5 * (beta + hi)),
            np.where(np.isinf(lo), beta / 2.0, 0.5 * (beta + lo)),
        )
    return P / P.sum(axis=1, keepdims=True)


def joint_affinities(points, perplexity: float) -> np.ndarray:
    X = _as_points(points)
    D2 = squareform(pdist(X, "sqeuclidean"))
    P = _conditional_affinities(D2, perplexity)
    P = P + P.T
    P /= P.sum()
    return np.maximum(P, 1e-12)


def _kl(P, Q) -> float:
    return float(np.sum(P * np.log(P / Q)))


def tsne(
    points,
    perplexity: float = 30.0,
    iterations: int = 1000,
    seed: int = 0,
    learning_rate: float = 200.0,
    exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
    init=None,
) -> Embedding2D:
    """Exact-gradient t-SNE into two dimensions.

    ``init`` overrides the seeded Gaussian start (sd 1e-4).  KL divergence
    is recorded every 50 iterations in ``params["kl"]``.
    """
    X = _as_points(points)
    n = X.shape[0]
    if n > MAX_TSNE_POINTS:
        raise ValueError(f"exact t-SNE supports at most {MAX_TSNE_POINTS} points, got {n}")
    if not 0 < perplexity < (n - 1) / 3:
        raise ValueError(f"perplexity must lie in (0, {(n - 1) / 3:.4g}) for {n} points, got {perplexity}")
    P = joint_affinities(X, perplexity)
    if init is None:
        Y = 1e-4 * np.random.default_rng(seed).standard_normal((n, 2))
    else:
        Y = np.array(init, dtype=float)
        if Y.shape != (n, 2):
            raise ValueError("init must be an N x 2 matrix")
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    kl = {}
    num = np.empty((n, n))
    for it in range(1, iterations + 1):
        exag = exaggeration if it <= exaggeration_iters else 1.0
        momentum = 0.5 if it <= exaggeration_iters else 0.8
        sq = (Y * Y).sum(axis=1)
        np.matmul(Y, Y.T, out=num)
        num *= -2.0
        num += sq[:, None]
        num += sq[None, :]
        num += 1.0
        np.reciprocal(num, out=num)
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)
        W = (exag * P - Q) * num
        grad = 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)
        same = (grad > 0) == (update > 0)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - learning_rate * gains * grad
        Y = Y + update
        Y -= Y.mean(axis=0)
        if it % 50 == 0:
            kl[it] = _kl(P, Q)
    params = {
        "perplexity": perplexity,
        "iterations": iterations,
        "learning_rate": learning_rate,
        "exaggeration": exaggeration,
        "exaggeration_iters": exaggeration_iters,
        "kl": kl,
    }
    return Embedding2D(Y, "tsne", params, seed)


# -- SVG -------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def scatter_svg(embedding: Embedding2D, groups=None, title: str = "", size: int = 480) -> str:
    """Render the first two coordinates as an SVG scatter, one colour per group."""
    Y = embedding.coords[:, :2]
    n = Y.shape[0]
    groups = np.zeros(n, dtype=int) if groups is None else np.asarray(groups)
    pad = 24
    lo, hi = Y.min(axis=0), Y.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    px = pad + (Y - lo) / span * (size - 2 * pad)
    keys = sorted(set(groups.tolist()), key=str)
    colour = {k: _PALETTE[i % len(_PALETTE)] for i, k in enumerate(keys)}
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 20 * len(keys)}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{pad}" y="16" font-size="12">{escape(title)}</text>',
    ]
    for (x, y), g in zip(px, groups.tolist()):
        out.append(f'<circle cx="{x:.2f}" cy="{size - y:.2f}" r="2" fill="{colour[g]}" fill-opacity="0.7"/>')
    for i, k in enumerate(keys):
        yy = size + 14 + 20 * i
        out.append(f'<circle cx="{pad}" cy="{yy - 4}" r="4" fill="{colour[k]}"/>')
        out.append(f'<text x="{pad + 10}" y="{yy}" font-size="12">{escape(str(k))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_scatter_svg(path, embedding: Embedding2D, groups=None, title: str = "") -> Path:
    path = Path(path)
    path.write_text(scatter_svg(embedding, groups, title), encoding="utf-8")
    return path
