"""CART trees and bagged forests for both demand regression and dwell classification.

Every training row carries a weight ``w`` and a target-sum vector ``s``:

* regression: ``s = w * y`` (one column), node value is the weighted mean;
* classification: ``s`` is the row's class-count vector, ``w`` its total,
  node value is the class-frequency vector.

Both criteria (variance reduction and Gini) reduce to maximising
``sum_k S_k**2 / W`` summed over the two children, so a single grower serves
both.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numba
import numpy as np


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int = 8
    min_leaf: int = 2
    max_features: int = 3
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 0 or self.min_leaf < 1 or self.max_features < 1:
            raise ValueError(f"invalid forest parameters {self}")


@dataclass
class Tree:
    feature: np.ndarray    # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray      # (n_nodes, n_outputs)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            n = node[r]
            go_left = X[r, self.feature[n]] <= self.threshold[n]
            node[r] = np.where(go_left, self.left[n], self.right[n])
            active[r] = self.feature[node[r]] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Tree:
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=float),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=float).reshape(len(d["feature"]), -1),
        )


@numba.njit(cache=True)
def _best_split(X, S, W, M, rows, start, end, features, min_leaf, xv, cs):
    """Best split of ``rows[start:end]``; returns (found, feature, threshold)."""
    n = end - start
    k = S.shape[1]
    tw = 0.0
    tm = 0.0
    ts = np.zeros(k)
    for a in range(start, end):
        i = rows[a]
        tw += W[i]
        tm += M[i]
        for c in range(k):
            ts[c] += S[i, c]
    parent = 0.0
    for c in range(k):
        parent += ts[c] * ts[c]
    parent /= tw
    best_score = parent + 1e-12 * max(abs(parent), 1.0)
    found = False
    best_f = -1
    best_thr = 0.0
    for f in features:
        for a in range(n):
            xv[a] = X[rows[start + a], f]
        order = np.argsort(xv[:n], kind="mergesort")
        cw = 0.0
        cm = 0.0
        cs[:] = 0.0
        for a in range(n - 1):
            i = rows[start + order[a]]
            cw += W[i]
            cm += M[i]
            for c in range(k):
                cs[c] += S[i, c]
            x0 = xv[order[a]]
            x1 = xv[order[a + 1]]
            if not x0 < x1:
                continue
            if cm < min_leaf or tm - cm < min_leaf:
                continue
            rw = tw - cw
            if cw <= 0.0 or rw <= 0.0:
                continue
            sl = 0.0
            sr = 0.0
            for c in range(k):
                sl += cs[c] * cs[c]
                r = ts[c] - cs[c]
                sr += r * r
            score = sl / cw + sr / rw
            if score > best_score:
                best_score = score
                found = True
                best_f = f
                best_thr = 0.5 * (x0 + x1)
    return found, best_f, best_thr


@numba.njit(cache=True)
def _grow(X, S, W, M, max_depth, min_leaf, feature_draws):
    n, k = S.shape
    max_nodes = 2 ** (max_depth + 1) - 1
    feature = np.full(max_nodes, -1, dtype=np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    value = np.zeros((max_nodes, k))
    n_rows = 0
    for i in range(n):
        if W[i] > 0:
            n_rows += 1
    rows = np.empty(n_rows, dtype=np.int64)
    j = 0
    for i in range(n):
        if W[i] > 0:
            rows[j] = i
            j += 1
    buf = np.empty(n_rows, dtype=np.int64)
    xv = np.empty(n_rows)
    cs = np.zeros(k)
    # stack of (node, start, end, depth)
    st_node = np.empty(max_nodes, dtype=np.int64)
    st_start = np.empty(max_nodes, dtype=np.int64)
    st_end = np.empty(max_nodes, dtype=np.int64)
    st_depth = np.empty(max_nodes, dtype=np.int64)
    n_nodes = 1
    n_split = 0
    sp = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n_rows
    st_depth[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        wsum = 0.0
        msum = 0.0
        for a in range(start, end):
            i = rows[a]
            wsum += W[i]
            msum += M[i]
            for c in range(k):
                value[node, c] += S[i, c]
        for c in range(k):
            value[node, c] /= wsum
        if depth >= max_depth or msum < 2 * min_leaf:
            continue
        feats = feature_draws[n_split]
        n_split += 1
        found, f, thr = _best_split(X, S, W, M, rows, start, end, feats, min_leaf, xv, cs)
        if not found:
            continue
        # stable partition of rows[start:end] around the threshold
        nl = 0
        nr = 0
        for a in range(start, end):
            i = rows[a]
            if X[i, f] <= thr:
                rows[start + nl] = i
                nl += 1
            else:
                buf[nr] = i
                nr += 1
        for a in range(nr):
            rows[start + nl + a] = buf[a]
        feature[node] = f
        threshold[node] = thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        n_nodes += 2
        # right pushed first so the left subtree is expanded first
        st_node[sp] = right[node]
        st_start[sp] = start + nl
        st_end[sp] = end
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = left[node]
        st_start[sp] = start
        st_end[sp] = start + nl
        st_depth[sp] = depth + 1
        sp += 1
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


def grow_tree(X, S, W, M, params: ForestParams, rng: np.random.Generator) -> Tree:
    """Grow one tree on rows with positive weight.

    ``M`` is the row multiplicity used for the ``min_leaf`` rule. Feature
    subsets for every potential split are drawn up front from ``rng``.
    """
    X = np.ascontiguousarray(X, dtype=float)
    S = np.ascontiguousarray(S, dtype=float)
    n_features = X.shape[1]
    mf = min(params.max_features, n_features)
    max_internal = 2 ** params.max_depth
    draws = np.argsort(rng.random((max_internal, n_features)), axis=1)[:, :mf].astype(np.int64)
    feature, threshold, left, right, value = _grow(
        X, S, np.asarray(W, dtype=float), np.asarray(M, dtype=float),
        params.max_depth, float(params.min_leaf), draws,
    )
    return Tree(feature.copy(), threshold.copy(), left.copy(), right.copy(), value.copy())


def canonical_order(X: np.ndarray, S: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Row permutation that depends only on row contents, not input order."""
    keys = np.hstack([X, S, W[:, None]])
    return np.lexsort(keys.T[::-1])


@dataclass
class Forest:
    trees: list[Tree]
    params: ForestParams
    seed: int
    n_features: int
    n_outputs: int
    oob_value: np.ndarray | None = None   # per canonical training row, NaN where never out of bag

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        out = np.zeros((len(X), self.n_outputs))
        for t in self.trees:
            out += t.predict(X)
        return out / len(self.trees)

    def to_dict(self) -> dict:
        return {
            "params": asdict(self.params),
            "seed": self.seed,
            "n_features": self.n_features,
            "n_outputs": self.n_outputs,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> Forest:
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            params=ForestParams(**d["params"]),
            seed=int(d["seed"]),
            n_features=int(d["n_features"]),
            n_outputs=int(d["n_outputs"]),
        )


def fit_forest(X, S, W, params: ForestParams, seed: int, *, keep_oob: bool = False):
    """Bagged CART forest.

    Rows are put in canonical order before any random draw, so the result does
    not depend on the order rows were supplied in. Returns ``(forest, order)``
    where ``order`` maps canonical positions back to input rows.
    """
    X = np.asarray(X, dtype=float)
    S = np.asarray(S, dtype=float)
    W = np.asarray(W, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    n = len(X)
    if n == 0:
        raise ValueError("cannot train a forest on an empty training set")
    if not (np.isfinite(X).all() and np.isfinite(S).all() and np.isfinite(W).all()):
        raise ValueError("training data must be finite")
    if (W <= 0).any():
        raise ValueError("row weights must be positive")
    order = canonical_order(X, S, W)
    X, S, W = X[order], S[order], W[order]
    rng = np.random.Generator(np.random.PCG64(seed))
    trees = []
    oob_sum = np.zeros_like(S) if keep_oob else None
    oob_cnt = np.zeros(n) if keep_oob else None
    for _ in range(params.n_trees):
        if params.bootstrap:
            mult = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)
        else:
            mult = np.ones(n)
        tree = grow_tree(X, S * mult[:, None], W * mult, mult, params, rng)
        trees.append(tree)
        if keep_oob:
            out = mult == 0
            if out.any():
                oob_sum[out] += tree.predict(X[out])
                oob_cnt[out] += 1
    forest = Forest(trees, params, seed, X.shape[1], S.shape[1])
    if keep_oob:
        with np.errstate(invalid="ignore", divide="ignore"):
            forest.oob_value = oob_sum / oob_cnt[:, None]
    return forest, order


def default_max_features(n_features: int) -> int:
    return math.ceil(math.sqrt(n_features))
