"""CART trees, random forests and least-squares gradient boosting."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

from .base import CLASSIFICATION, REGRESSION, ModelError, TrainedModel, check_xy

LEAF = -1


@njit(cache=True)
def _build_tree(X, order, y, w, n_classes, mtry, min_leaf, max_depth, seed):
    """Grow one tree level by level over presorted feature columns.

    ``order[f]`` lists row indices sorted by feature ``f``; ``w`` holds row
    multiplicities (bootstrap counts, 0 = absent).  Regression maximises the
    sum-of-squares reduction, classification the Gini gain.  A node is a leaf
    when pure, at ``max_depth``, lighter than ``2 * min_leaf``, or when no
    split leaves ``min_leaf`` weight on both sides and improves the criterion.
    Each node considers ``mtry`` features drawn without replacement.
    """
    np.random.seed(seed)
    n, p = X.shape
    nval = max(n_classes, 1)
    cap = 2 * n + 1
    feat = np.full(cap, -1, dtype=np.int64)
    thr = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros((cap, nval))
    W = np.zeros(cap)
    S = np.zeros(cap)
    ymin = np.full(cap, np.inf)
    ymax = np.full(cap, -np.inf)
    node_of = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if w[i] > 0:
            node_of[i] = 0
    loc = np.full(cap, -1, dtype=np.int64)
    perm = np.arange(p)
    level = np.zeros(1, dtype=np.int64)
    n_nodes = 1
    depth = 0
    while level.shape[0] > 0:
        nl = level.shape[0]
        for j in range(nl):
            nd = level[j]
            W[nd] = 0.0
            S[nd] = 0.0
            for k in range(nval):
                value[nd, k] = 0.0
        for i in range(n):
            nd = node_of[i]
            if nd < 0:
                continue
            W[nd] += w[i]
            if n_classes == 0:
                S[nd] += w[i] * y[i]
                if y[i] < ymin[nd]:
                    ymin[nd] = y[i]
                if y[i] > ymax[nd]:
                    ymax[nd] = y[i]
            else:
                value[nd, int(y[i])] += w[i]
        # decide which level nodes try to split
        n_split = 0
        split_nodes = np.empty(nl, dtype=np.int64)
        parent = np.zeros(nl)
        for j in range(nl):
            nd = level[j]
            if n_classes == 0:
                value[nd, 0] = S[nd] / W[nd]
                pure = ymin[nd] == ymax[nd]
                crit = S[nd] * S[nd] / W[nd]
            else:
                crit = 0.0
                pure = False
                for k in range(nval):
                    crit += value[nd, k] * value[nd, k]
                    if value[nd, k] == W[nd]:
                        pure = True
                crit /= W[nd]
                for k in range(nval):
                    value[nd, k] /= W[nd]
            if pure or depth >= max_depth or W[nd] < 2 * min_leaf:
                continue
            loc[nd] = n_split
            split_nodes[n_split] = nd
            parent[n_split] = crit
            n_split += 1
        if n_split == 0:
            break
        cand = np.zeros((n_split, p), dtype=np.bool_)
        fcount = np.zeros(p, dtype=np.int64)
        for j in range(n_split):
            for a in range(mtry):
                b = a + np.random.randint(p - a)
                t = perm[a]
                perm[a] = perm[b]
                perm[b] = t
            for a in range(mtry):
                cand[j, perm[a]] = True
                fcount[perm[a]] += 1
        best = np.empty(n_split)
        for j in range(n_split):
            best[j] = parent[j] * (1.0 + 1e-12) + 1e-12
        best_f = np.full(n_split, -1, dtype=np.int64)
        best_t = np.zeros(n_split)
        run_w = np.zeros(n_split)
        run_s = np.zeros(n_split)
        run_c = np.zeros((n_split, nval))
        last = np.zeros(n_split)
        for f in range(p):
            if fcount[f] == 0:
                continue
            for j in range(n_split):
                run_w[j] = 0.0
                run_s[j] = 0.0
                for k in range(nval):
                    run_c[j, k] = 0.0
            for r in range(n):
                i = order[f, r]
                nd = node_of[i]
                if nd < 0:
                    continue
                j = loc[nd]
                if j < 0 or not cand[j, f]:
                    continue
                xi = X[i, f]
                if run_w[j] > 0 and xi > last[j]:
                    wl = run_w[j]
                    wr = W[nd] - wl
                    if wl >= min_leaf and wr >= min_leaf:
                        if n_classes == 0:
                            sr = S[nd] - run_s[j]
                            score = run_s[j] * run_s[j] / wl + sr * sr / wr
                        else:
                            gl = 0.0
                            gr = 0.0
                            for k in range(nval):
                                cl = run_c[j, k]
                                cr = value[nd, k] * W[nd] - cl
                                gl += cl * cl
                                gr += cr * cr
                            score = gl / wl + gr / wr
                        if score > best[j]:
                            best[j] = score
                            best_f[j] = f
                            tv = last[j] + (xi - last[j]) / 2.0
                            if tv >= xi:
                                tv = last[j]
                            best_t[j] = tv
                run_w[j] += w[i]
                if n_classes == 0:
                    run_s[j] += w[i] * y[i]
                else:
                    run_c[j, int(y[i])] += w[i]
                last[j] = xi
        n_children = 0
        for j in range(n_split):
            if best_f[j] >= 0:
                n_children += 2
        nxt = np.empty(n_children, dtype=np.int64)
        c = 0
        for j in range(n_split):
            nd = split_nodes[j]
            loc[nd] = -1
            if best_f[j] < 0:
                continue
            feat[nd] = best_f[j]
            thr[nd] = best_t[j]
            left[nd] = n_nodes
            right[nd] = n_nodes + 1
            nxt[c] = n_nodes
            nxt[c + 1] = n_nodes + 1
            c += 2
            n_nodes += 2
        for i in range(n):
            nd = node_of[i]
            if nd < 0:
                continue
            if feat[nd] < 0:
                node_of[i] = -1
            elif X[i, feat[nd]] <= thr[nd]:
                node_of[i] = left[nd]
            else:
                node_of[i] = right[nd]
        level = nxt
        depth += 1
    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@njit(cache=True)
def _apply_tree(X, feat, thr, left, right):
    n = X.shape[0]
    leaf = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feat[node] >= 0:
            if X[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        leaf[i] = node
    return leaf


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # nodes x max(K, 1): mean or class fractions

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == LEAF))

    def apply(self, X) -> np.ndarray:
        return _apply_tree(np.ascontiguousarray(X, dtype=float), self.feature, self.threshold, self.left, self.right)

    def predict_value(self, X) -> np.ndarray:
        return self.value[self.apply(X)]


def presort(X) -> np.ndarray:
    """Row order of each feature column, shape (p, n)."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)


def grow_tree(X, y, rows=None, n_classes=0, mtry=None, min_leaf=1, max_depth=10_000, seed=0,
              order=None) -> Tree:
    """Grow a CART tree on ``rows`` (repeats act as multiplicities)."""
    X = np.ascontiguousarray(X, dtype=float)
    n, p = X.shape
    mtry = p if mtry is None else int(mtry)
    if not 1 <= mtry <= p:
        raise ModelError(f"mtry={mtry} outside [1, {p}]")
    w = np.ones(n) if rows is None else np.bincount(np.asarray(rows, dtype=np.int64), minlength=n).astype(float)
    order = presort(X) if order is None else order
    out = _build_tree(X, order, np.asarray(y, dtype=float), w, int(n_classes), mtry, float(min_leaf),
                      int(max_depth), int(seed) % (2 ** 32))
    return Tree(*out)


def default_mtry(p: int, task: str) -> int:
    return max(1, int(np.sqrt(p)) if task == CLASSIFICATION else p // 3)


@dataclass(frozen=True)
class ForestState:
    trees: tuple[Tree, ...]


def _tree_seeds(seed: int, ntrees: int) -> list[np.random.Generator]:
    ss = np.random.SeedSequence(int(seed))
    return [np.random.default_rng(c) for c in ss.spawn(ntrees)]


def fit_rf(X, y, ntrees: int = 500, mtry: int | None = None, min_node: int = 5, seed: int = 0,
           task: str = REGRESSION, n_classes: int = 0, bootstrap: bool = True) -> TrainedModel:
    """Random forest of CART trees on bootstrap resamples.

    ``min_node`` is the minimum number of (resampled) rows in a leaf.  Tree
    ``t`` draws its randomness from child ``t`` of ``seed``'s seed sequence, so
    the first ``k`` trees of a larger forest equal a ``k``-tree forest.
    """
    X, y = check_xy(X, y, task, n_classes)
    n, p = X.shape
    if ntrees < 1:
        raise ModelError("rf: ntrees must be >= 1")
    mtry = default_mtry(p, task) if mtry is None else int(mtry)
    if not 1 <= mtry <= p:
        raise ModelError(f"rf: mtry={mtry} outside [1, {p}]")
    if min_node < 1:
        raise ModelError("rf: min_node must be >= 1")
    if np.all(y == y[0]):
        warnings.warn("rf: all targets identical; forest is a constant predictor", stacklevel=2)
    trees = []
    K = n_classes if task == CLASSIFICATION else 0
    Xc = np.ascontiguousarray(X)
    order = presort(Xc)
    for rng in _tree_seeds(seed, ntrees):
        rows = rng.integers(0, n, n) if bootstrap else None
        trees.append(grow_tree(Xc, y, rows, K, mtry, min_node, seed=int(rng.integers(2 ** 32)), order=order))
    params = {"ntrees": ntrees, "mtry": mtry, "min_node": min_node}
    return TrainedModel("rf", task, params, ForestState(tuple(trees)), p, n_classes)


def rf_tree_outputs(model: TrainedModel, X) -> np.ndarray:
    """Per-tree outputs: (ntrees, n) values or (ntrees, n, K) one-hot votes."""
    X = model.transform(X)
    st: ForestState = model.state
    if model.task == REGRESSION:
        return np.stack([t.predict_value(X)[:, 0] for t in st.trees])
    K = model.n_classes
    votes = np.zeros((len(st.trees), X.shape[0], K))
    for i, t in enumerate(st.trees):
        lab = np.argmax(t.predict_value(X), axis=1)
        votes[i, np.arange(X.shape[0]), lab] = 1.0
    return votes


def predict_rf(model: TrainedModel, X, ntrees: int | None = None):
    out = rf_tree_outputs(model, X)
    k = len(out) if ntrees is None else ntrees
    return out[:k].mean(axis=0)


@dataclass(frozen=True)
class GbmState:
    init: float
    shrinkage: float
    trees: tuple[Tree, ...]
    train_loss: np.ndarray  # mean squared error after each stage (index 0 = initial)


def fit_gbm(X, y, ntrees: int = 100, depth: int = 2, shrinkage: float = 0.1, seed: int = 0,
            min_node: int = 5, subsample: float = 1.0) -> TrainedModel:
    """Least-squares boosting: ``F_m = F_{m-1} + shrinkage * tree_m(residuals)``."""
    X, y = check_xy(X, y, REGRESSION)
    n, p = X.shape
    if ntrees < 0:
        raise ModelError("gbm: ntrees must be >= 0")
    if depth < 1:
        raise ModelError("gbm: depth must be >= 1")
    if not 0 < shrinkage <= 1:
        raise ModelError(f"gbm: shrinkage={shrinkage} outside (0, 1]")
    if not 0 < subsample <= 1:
        raise ModelError("gbm: subsample outside (0, 1]")
    rng = np.random.default_rng(seed)
    Xc = np.ascontiguousarray(X)
    order = presort(Xc)
    F = np.full(n, y.mean())
    losses = [float(np.mean((y - F) ** 2))]
    trees = []
    for _ in range(ntrees):
        r = y - F
        rows = None if subsample == 1 else rng.choice(n, max(1, int(subsample * n)), replace=False)
        tree = grow_tree(Xc, r, rows, 0, p, min_node, depth, seed=0, order=order)
        F = F + shrinkage * tree.predict_value(Xc)[:, 0]
        trees.append(tree)
        losses.append(float(np.mean((y - F) ** 2)))
    params = {"ntrees": ntrees, "depth": depth, "shrinkage": shrinkage, "min_node": min_node}
    state = GbmState(float(y.mean()), float(shrinkage), tuple(trees), np.array(losses))
    return TrainedModel("gbm", REGRESSION, params, state, p)


def gbm_staged(model: TrainedModel, X, stages) -> list[np.ndarray]:
    """Predictions after each requested number of trees."""
    X = model.transform(X)
    st: GbmState = model.state
    want = sorted(set(int(s) for s in stages))
    out = {}
    F = np.full(X.shape[0], st.init)
    if 0 in want:
        out[0] = F.copy()
    for m, tree in enumerate(st.trees, start=1):
        F = F + st.shrinkage * tree.predict_value(X)[:, 0]
        if m in want:
            out[m] = F.copy()
    return [out[int(s)] for s in stages]


def predict_gbm(model: TrainedModel, X, ntrees: int | None = None):
    k = model.params["ntrees"] if ntrees is None else ntrees
    return gbm_staged(model, X, [k])[0]
