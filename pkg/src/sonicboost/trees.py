"""CART regression trees grown by exact greedy SSE reduction.

Trees are stored as flat node arrays (root at offset 0). Leaves have
``feature == -1``. Routing rule everywhere in the package: a row goes left
iff ``x[feature] <= threshold``.

``cover`` is the total sample weight reaching a node. With unit weights this
is the sample count; bootstrap resampling passes draw counts as weights, so a
forest tree's cover counts bootstrap draws.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInputError, InvalidArgumentError, InvalidInputError, ModelFormatError

@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 4
    min_samples_leaf: int = 1
    feature_subsample: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if not (isinstance(self.max_depth, (int, np.integer)) and 1 <= self.max_depth <= 64):
            raise InvalidArgumentError(f"max_depth must be an integer in [1, 64], got {self.max_depth!r}")
        if self.min_samples_leaf < 1:
            raise InvalidArgumentError("min_samples_leaf must be >= 1")
        if self.feature_subsample is not None and self.feature_subsample < 1:
            raise InvalidArgumentError("feature_subsample must be >= 1")


@dataclass(frozen=True)
class SplitCandidate:
    feature: int
    threshold: float
    sse_reduction: float


@dataclass(eq=False)
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    n_features: int
    max_depth: int
    min_samples_leaf: int = 1

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def apply(self, X) -> np.ndarray:
        """Leaf offset reached by each row."""
        X = _check_matrix(X, self.n_features)
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            inner = np.nonzero(feat >= 0)[0]
            if inner.size == 0:
                return node
            cur = node[inner]
            go_left = X[inner, feat[inner]] <= self.threshold[cur]
            node[inner] = np.where(go_left, self.left[cur], self.right[cur])

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "n_features": int(self.n_features),
            "max_depth": int(self.max_depth),
            "min_samples_leaf": int(self.min_samples_leaf),
            "feature": [int(v) for v in self.feature],
            "threshold": [float(v) for v in self.threshold],
            "left": [int(v) for v in self.left],
            "right": [int(v) for v in self.right],
            "value": [float(v) for v in self.value],
            "cover": [float(v) for v in self.cover],
        }

    @classmethod
    def from_dict(cls, d: dict) -> RegressionTree:
        try:
            arrays = {
                "feature": np.asarray(d["feature"], dtype=np.int64),
                "threshold": np.asarray(d["threshold"], dtype=float),
                "left": np.asarray(d["left"], dtype=np.int64),
                "right": np.asarray(d["right"], dtype=np.int64),
                "value": np.asarray(d["value"], dtype=float),
                "cover": np.asarray(d["cover"], dtype=float),
            }
            tree = cls(
                **arrays,
                n_features=int(d["n_features"]),
                max_depth=int(d["max_depth"]),
                min_samples_leaf=int(d.get("min_samples_leaf", 1)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed tree record: {exc}") from None
        n = tree.n_nodes
        if n == 0 or any(len(a) != n for a in arrays.values()):
            raise ModelFormatError("tree node arrays are empty or of unequal length")
        inner = tree.feature >= 0
        if np.any(tree.feature >= tree.n_features):
            raise ModelFormatError("tree references a feature beyond n_features")
        kids = np.concatenate([tree.left[inner], tree.right[inner]])
        if np.any(kids <= 0) or np.any(kids >= n):
            raise ModelFormatError("tree child offsets out of range")
        return tree


def leaf(value: float, cover: float, n_features: int, max_depth: int = 1) -> RegressionTree:
    """A single-leaf tree; handy for fixtures and degenerate fits."""
    return RegressionTree(
        feature=np.array([-1]),
        threshold=np.array([0.0]),
        left=np.array([-1]),
        right=np.array([-1]),
        value=np.array([float(value)]),
        cover=np.array([float(cover)]),
        n_features=n_features,
        max_depth=max_depth,
    )


def _check_matrix(X, n_features=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise InvalidInputError("features must be a 2-D matrix")
    if n_features is not None and X.shape[1] != n_features:
        raise InvalidInputError(f"expected {n_features} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("features contain non-finite values")
    return X


def presort(X) -> np.ndarray:
    """Stable row order per feature column, shape (features, rows); reusable across fits on the same X."""
    X = np.asarray(X, dtype=float)
    return np.argsort(X, axis=0, kind="stable").T.copy()


def _scan(xs, ys, ws, min_cover, reg_lambda):
    """Best cut over several pre-sorted feature columns at once.

    ``xs``, ``ys`` and ``ws`` have shape (features, rows), each row sorted by
    its feature. Returns ``(row, position, reduction)`` where the cut falls
    between sorted entries ``position`` and ``position + 1`` of ``row``; row is
    -1 when no cut is admissible. With ``reg_lambda == 0`` the reduction is
    the SSE reduction; otherwise it is the doubled second-order structure gain.
    ``ws=None`` means unit weights. Ties go to the first row, then the first
    position.
    """
    m = ys.shape[1]
    if ws is None:
        W = float(m)
        cw = np.arange(1.0, m)
        center = ys[0].sum() / W
    else:
        W = ws[0].sum()
        cw = np.cumsum(ws, axis=1)[:, :-1]
        center = np.dot(ws[0], ys[0]) / W
    t = ys
    if reg_lambda == 0.0:
        # centering is exact here and curbs cancellation in the sums
        t = ys - center
    wt = t if ws is None else ws * t
    S = wt.sum(axis=1, keepdims=True)
    cs = np.cumsum(wt, axis=1)[:, :-1]
    valid = (xs[:, :-1] < xs[:, 1:]) & (cw >= min_cover) & (W - cw >= min_cover)
    if not valid.any():
        return -1, -1, 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = cs * cs / (cw + reg_lambda) + (S - cs) ** 2 / (W - cw + reg_lambda)
    gain -= S * S / (W + reg_lambda)
    # the true gain is never negative; clipping rounding noise keeps zero-gain
    # cuts admissible and leaves their ties to the index order
    gain = np.where(valid, np.maximum(gain, 0.0), -np.inf)
    flat = int(np.argmax(gain))
    row, pos = divmod(flat, gain.shape[1])
    return row, pos, float(gain[row, pos])


def _midpoint(a: float, b: float) -> float:
    mid = 0.5 * (a + b)
    if not (a <= mid < b):
        mid = a
    return float(mid)


def best_split(feature_values, targets) -> Optional[SplitCandidate]:
    """Best single-feature split by SSE reduction, or None when no cut is admissible."""
    x = np.asarray(feature_values, dtype=float).ravel()
    y = np.asarray(targets, dtype=float).ravel()
    if x.size != y.size:
        raise InvalidArgumentError("feature and target vectors differ in length")
    if x.size < 2:
        raise InvalidArgumentError("need at least two samples")
    if np.ptp(y) == 0:
        return None
    order = np.argsort(x, kind="stable")
    xs, ys = x[order][None, :], y[order][None, :]
    row, pos, red = _scan(xs, ys, None, 1.0, 0.0)
    if row < 0:
        return None
    return SplitCandidate(0, _midpoint(xs[0, pos], xs[0, pos + 1]), red)


def fit_tree(features, targets, sample_weights=None, params: TreeParams = TreeParams(), *, presorted=None):
    """Grow a CART regression tree top-down.

    Leaves hold the weighted mean of their targets. Growth stops at
    ``max_depth``, when a child would hold less than ``min_samples_leaf``
    weight, or when the node is pure. Zero-gain cuts are admissible, so
    interactions such as XOR can be separated at depth 2.
    """
    return _grow(features, targets, sample_weights, params, presorted=presorted)


def _grow(features, targets, sample_weights, params, presorted=None, reg_lambda=0.0, gamma=None):
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float).ravel()
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n, p = X.shape
    if n == 0 or y.size == 0:
        raise EmptyInputError("cannot fit a tree on empty input")
    if y.size != n:
        raise InvalidArgumentError(f"features have {n} rows but targets have {y.size}")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("targets contain non-finite values")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("features contain non-finite values")
    if sample_weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(sample_weights, dtype=float).ravel()
        if w.size != n or not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidArgumentError("sample weights must be finite, nonnegative and one per row")
        if not w.sum() > 0:
            raise EmptyInputError("all sample weights are zero")
    if params.feature_subsample is not None and params.feature_subsample > p:
        raise InvalidArgumentError(f"feature_subsample {params.feature_subsample} exceeds {p} features")
    if presorted is None:
        presorted = presort(X)
    orders = np.asarray(presorted)
    keep = w > 0
    if not keep.all():
        orders = orders[keep[orders]].reshape(p, -1)
    rng = np.random.default_rng(params.seed) if params.feature_subsample else None
    min_cover = float(params.min_samples_leaf)
    scratch = np.zeros(n, dtype=bool)
    unit = bool(np.all(w == 1.0))
    XT = np.ascontiguousarray(X.T)

    feat, thr, lft, rgt, val, cov = [], [], [], [], [], []

    def new_node(rows):
        W = float(w[rows].sum())
        feat.append(-1)
        thr.append(0.0)
        lft.append(-1)
        rgt.append(-1)
        val.append(float(np.dot(w[rows], y[rows]) / (W + reg_lambda)))
        cov.append(W)
        return len(feat) - 1

    def grow(node, orders, depth):
        rows = orders[0]
        if depth >= params.max_depth or rows.size < 2 or np.ptp(y[rows]) == 0:
            return
        if cov[node] < 2 * min_cover:
            return
        if rng is None:
            cand, sub = range(p), orders
        else:
            cand = np.sort(rng.choice(p, params.feature_subsample, replace=False))
            sub = orders[cand]
        xs = np.empty(sub.shape)
        for r, j in enumerate(cand):
            XT[j].take(sub[r], out=xs[r])
        k, pos, red = _scan(xs, y.take(sub), None if unit else w.take(sub), min_cover, reg_lambda)
        if k < 0 or (gamma is not None and 0.5 * red < gamma):
            return
        j = int(cand[k])
        t = _midpoint(xs[k, pos], xs[k, pos + 1])
        scratch[rows] = X[rows, j] <= t
        goes_left = scratch.take(orders)
        left_orders = orders[goes_left].reshape(p, -1)
        right_orders = orders[~goes_left].reshape(p, -1)
        feat[node] = j
        thr[node] = t
        lnode = new_node(left_orders[0])
        lft[node] = lnode
        grow(lnode, left_orders, depth + 1)
        rnode = new_node(right_orders[0])
        rgt[node] = rnode
        grow(rnode, right_orders, depth + 1)

    root = new_node(orders[0])
    grow(root, orders, 0)
    return RegressionTree(
        feature=np.asarray(feat, dtype=np.int64),
        threshold=np.asarray(thr, dtype=float),
        left=np.asarray(lft, dtype=np.int64),
        right=np.asarray(rgt, dtype=np.int64),
        value=np.asarray(val, dtype=float),
        cover=np.asarray(cov, dtype=float),
        n_features=p,
        max_depth=params.max_depth,
        min_samples_leaf=params.min_samples_leaf,
    )


def predict_tree(tree: RegressionTree, x: Sequence[float]) -> float:
    """Route one feature vector to its leaf value."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != tree.n_features:
        raise InvalidInputError(f"expected {tree.n_features} features, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("feature vector contains non-finite values")
    node = 0
    while tree.feature[node] >= 0:
        node = tree.left[node] if x[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
    return float(tree.value[node])
