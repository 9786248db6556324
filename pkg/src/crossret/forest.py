"""Random-forest regression built from CART trees.

Splits minimise the summed squared error of the two children.  At each node
``max_features`` candidate features are drawn without replacement; thresholds
are midpoints between consecutive distinct values present in the node.  Among
equal-gain splits the lowest feature index, then the lowest threshold, wins.

Tree growing runs in numba.  Feature columns are first mapped to integer codes
(position among the column's sorted distinct values), which lets a node find
its best split either by sorting or by a histogram over codes; both visit the
same candidate thresholds, so the choice is only a speed trade-off.

Randomness comes from a splitmix64 stream seeded per tree from
``(seed, tree_index)``, so trees are independent of build order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

from .errors import DimensionMismatch, EmptyData, SerializationError
from .serial import read_npz, write_npz

UNLIMITED_DEPTH = 1 << 30

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@dataclass(frozen=True)
class ForestHyper:
    max_features: int = 25
    max_depth: int = 7
    n_estimators: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.max_features < 1 or self.max_depth < 1:
            raise ValueError("max_features and max_depth must be >= 1")

    @property
    def name(self) -> str:
        return f"RF_F{self.max_features}_D{self.max_depth}"


RF_GRID = [ForestHyper(f, d) for f in (5, 10, 15, 20) for d in (3, 5, 7, 9)] + \
          [ForestHyper(f, d) for f in (25, 30, 35) for d in (3, 5, 7, 9, 11, 15, 20)]
RF_BEST = ForestHyper(25, 7)


# -- random stream ------------------------------------------------------------

@njit(cache=True)
def _next_u64(state):
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _randbelow(state, n):
    return np.int64(_next_u64(state) % np.uint64(n))


@njit(cache=True)
def _tree_state(seed, tree_index):
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed)
    base = _next_u64(state)
    state[0] = base ^ (np.uint64(tree_index) * _MIX2)
    _next_u64(state)
    return state


def tree_seed_state(seed: int, tree_index: int) -> np.ndarray:
    return _tree_state(np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(tree_index))


# -- split search -------------------------------------------------------------

@njit(cache=True)
def _best_split_hist(codes_f, y, idx, start, end, n_bins, cnt, sm):
    for b in range(n_bins):
        cnt[b] = 0
        sm[b] = 0.0
    total = 0.0
    for k in range(start, end):
        r = idx[k]
        c = codes_f[r]
        cnt[c] += 1
        sm[c] += y[r]
        total += y[r]
    n = end - start
    best = -np.inf
    best_lo = -1
    best_hi = -1
    nl = 0
    sl = 0.0
    prev = -1
    for b in range(n_bins):
        if cnt[b] == 0:
            continue
        if prev >= 0:
            nr = n - nl
            sr = total - sl
            score = sl * sl / nl + sr * sr / nr
            if score > best:
                best = score
                best_lo = prev
                best_hi = b
        nl += cnt[b]
        sl += sm[b]
        prev = b
    return best, best_lo, best_hi


@njit(cache=True)
def _best_split_sort(codes_f, y, idx, start, end):
    n = end - start
    c = np.empty(n, dtype=np.int64)
    v = np.empty(n)
    total = 0.0
    for k in range(n):
        r = idx[start + k]
        c[k] = codes_f[r]
        v[k] = y[r]
        total += v[k]
    order = np.argsort(c, kind="mergesort")
    best = -np.inf
    best_lo = -1
    best_hi = -1
    sl = 0.0
    # per-value subtotals are added to the running sum exactly as in the
    # histogram path (stable sort keeps node order within a value), so both
    # searches produce bit-identical scores
    part = 0.0
    for k in range(n - 1):
        part += v[order[k]]
        a = c[order[k]]
        b = c[order[k + 1]]
        if a == b:
            continue
        sl += part
        part = 0.0
        nl = k + 1
        nr = n - nl
        sr = total - sl
        score = sl * sl / nl + sr * sr / nr
        if score > best:
            best = score
            best_lo = a
            best_hi = b
    return best, best_lo, best_hi


@njit(cache=True)
def _grow_tree(codes, bin_values, n_bins, y, idx, max_features, max_depth, state, use_hist):
    """Grow one tree on the sample rows ``idx`` (may contain repeats)."""
    n = idx.shape[0]
    n_feat = codes.shape[1]
    cap = 2 * n + 1
    if max_depth < 30:
        cap = min(cap, (1 << (max_depth + 1)) - 1)
    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap)
    n_samples = np.zeros(cap, dtype=np.int64)

    max_bins = bin_values.shape[1]
    cnt = np.zeros(max_bins, dtype=np.int64)
    sm = np.zeros(max_bins)
    perm = np.arange(n_feat)
    mf = min(max_features, n_feat)
    cand = np.empty(mf, dtype=np.int64)

    stack_node = np.empty(cap, dtype=np.int64)
    stack_start = np.empty(cap, dtype=np.int64)
    stack_end = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int64)
    sp = 0
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = n
    stack_depth[0] = 0
    sp = 1
    n_nodes = 1
    scratch = np.empty(n, dtype=np.int64)

    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        start = stack_start[sp]
        end = stack_end[sp]
        depth = stack_depth[sp]
        count = end - start
        s = 0.0
        ymin = np.inf
        ymax = -np.inf
        for k in range(start, end):
            yk = y[idx[k]]
            s += yk
            if yk < ymin:
                ymin = yk
            if yk > ymax:
                ymax = yk
        value[node] = ymin if ymin == ymax else s / count
        n_samples[node] = count
        if depth >= max_depth or count < 2 or ymin == ymax:
            continue

        # draw candidate features (partial Fisher-Yates), scan in index order
        for k in range(mf):
            j = k + _randbelow(state, n_feat - k)
            tmp = perm[k]
            perm[k] = perm[j]
            perm[j] = tmp
        for k in range(mf):
            cand[k] = perm[k]
        cand.sort()

        best = -np.inf
        best_f = -1
        best_lo = -1
        best_hi = -1
        log_cost = count * max(1.0, np.log2(count))
        for k in range(mf):
            f = cand[k]
            if use_hist == 1 or (use_hist == -1 and n_bins[f] <= log_cost):
                sc, lo, hi = _best_split_hist(codes[:, f], y, idx, start, end, n_bins[f], cnt, sm)
            else:
                sc, lo, hi = _best_split_sort(codes[:, f], y, idx, start, end)
            if lo >= 0 and sc > best:
                best = sc
                best_f = f
                best_lo = lo
                best_hi = hi
        if best_f < 0:
            continue

        # stable partition: codes <= best_lo go left
        nl = 0
        nr = 0
        for k in range(start, end):
            r = idx[k]
            if codes[r, best_f] <= best_lo:
                idx[start + nl] = r
                nl += 1
            else:
                scratch[nr] = r
                nr += 1
        for k in range(nr):
            idx[start + nl + k] = scratch[k]

        feature[node] = best_f
        threshold[node] = 0.5 * (bin_values[best_f, best_lo] + bin_values[best_f, best_hi])
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        # push right first so the left subtree is numbered depth-first
        stack_node[sp] = rnode
        stack_start[sp] = start + nl
        stack_end[sp] = end
        stack_depth[sp] = depth + 1
        sp += 1
        stack_node[sp] = lnode
        stack_start[sp] = start
        stack_end[sp] = start + nl
        stack_depth[sp] = depth + 1
        sp += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), n_samples[:n_nodes].copy())


@njit(cache=True)
def _bootstrap(state, n):
    idx = np.empty(n, dtype=np.int64)
    for k in range(n):
        idx[k] = _randbelow(state, n)
    return idx


@njit(cache=True)
def _predict_nodes(X, feature, threshold, left, right, value, offsets, out):
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    leaf = np.empty(n_trees)
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            leaf[t] = value[base + node]
            acc += leaf[t]
        m = acc / n_trees
        # second pass removes the rounding of the running sum (exact for equal leaves)
        corr = 0.0
        for t in range(n_trees):
            corr += leaf[t] - m
        out[i] = m + corr / n_trees
    return out


# -- public API ---------------------------------------------------------------

def encode_columns(X: np.ndarray):
    """Integer codes of each column value among that column's distinct values."""
    n, p = X.shape
    uniques = [np.unique(X[:, j]) for j in range(p)]
    n_bins = np.array([len(u) for u in uniques], dtype=np.int64)
    bin_values = np.full((p, int(n_bins.max())), np.nan)
    codes = np.empty((n, p), dtype=np.int32, order="F")
    for j, u in enumerate(uniques):
        bin_values[j, :len(u)] = u
        codes[:, j] = np.searchsorted(u, X[:, j])
    return codes, bin_values, n_bins


def _check_xy(X, y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise DimensionMismatch(f"X {X.shape} and y {y.shape} do not align")
    if len(y) == 0:
        raise EmptyData("no training examples")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("non-finite training data")
    return X, y


@dataclass
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty(len(X))
        offsets = np.array([0, self.n_nodes], dtype=np.int64)
        return _predict_nodes(X, self.feature, self.threshold, self.left, self.right,
                              self.value, offsets, out)


def fit_tree(X, y, max_features: int | None = None, max_depth: int | None = None,
             seed: int = 0, bootstrap: bool = False, split_search: str = "auto") -> RegressionTree:
    """Grow a single CART tree.

    ``split_search`` is ``"auto"``, ``"hist"`` or ``"sort"``; all three give
    the same tree.
    """
    X, y = _check_xy(X, y)
    codes, bin_values, n_bins = encode_columns(X)
    return _fit_encoded(codes, bin_values, n_bins, y,
                        X.shape[1] if max_features is None else max_features,
                        UNLIMITED_DEPTH if max_depth is None else max_depth,
                        seed, 0, bootstrap, split_search)


def _fit_encoded(codes, bin_values, n_bins, y, max_features, max_depth, seed, tree_index,
                 bootstrap, split_search="auto"):
    state = tree_seed_state(seed, tree_index)
    n = len(y)
    idx = _bootstrap(state, n) if bootstrap else np.arange(n, dtype=np.int64)
    mode = {"auto": -1, "sort": 0, "hist": 1}[split_search]
    return RegressionTree(*_grow_tree(codes, bin_values, n_bins, y, idx, max_features,
                                      max_depth, state, mode))


class Forest:
    """Fitted forest; node arrays of all trees are concatenated."""

    def __init__(self, hyper: ForestHyper, trees: list[RegressionTree], n_features: int):
        self.hyper = hyper
        self.n_features = n_features
        sizes = [t.n_nodes for t in trees]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        cat = lambda name, dt: np.concatenate([getattr(t, name) for t in trees]).astype(dt)  # noqa: E731
        self.feature = cat("feature", np.int32)
        self.threshold = cat("threshold", np.float64)
        self.left = cat("left", np.int32)
        self.right = cat("right", np.int32)
        self.value = cat("value", np.float64)
        self.n_samples = cat("n_samples", np.int64)

    @property
    def n_trees(self) -> int:
        return len(self.offsets) - 1

    def tree(self, k: int) -> RegressionTree:
        a, b = self.offsets[k], self.offsets[k + 1]
        return RegressionTree(self.feature[a:b], self.threshold[a:b], self.left[a:b],
                              self.right[a:b], self.value[a:b], self.n_samples[a:b])

    def trees(self):
        return [self.tree(k) for k in range(self.n_trees)]

    def predict(self, X) -> np.ndarray:
        return predict_forest(self, X)


def fit_forest(X, y, hyper: ForestHyper) -> Forest:
    """Bootstrap-aggregated CART trees; tree ``k`` is seeded from ``(hyper.seed, k)``."""
    X, y = _check_xy(X, y)
    codes, bin_values, n_bins = encode_columns(X)
    trees = [_fit_encoded(codes, bin_values, n_bins, y, hyper.max_features, hyper.max_depth,
                          hyper.seed, k, True)
             for k in range(hyper.n_estimators)]
    return Forest(hyper, trees, X.shape[1])


def predict_forest(forest: Forest, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != forest.n_features:
        raise DimensionMismatch(f"expected (n, {forest.n_features}) inputs, got {X.shape}")
    out = np.empty(len(X))
    return _predict_nodes(X, forest.feature, forest.threshold, forest.left, forest.right,
                          forest.value, forest.offsets, out)


_FOREST_ARRAYS = ("offsets", "feature", "threshold", "left", "right", "value", "n_samples")


def save_forest(forest: Forest, path) -> None:
    write_npz(path, "crossret.forest",
              {"hyper": asdict(forest.hyper), "n_features": forest.n_features},
              {name: getattr(forest, name) for name in _FOREST_ARRAYS})


def load_forest(path) -> Forest:
    header, d = read_npz(path, "crossret.forest")
    try:
        forest = Forest.__new__(Forest)
        forest.hyper = ForestHyper(**header["hyper"])
        forest.n_features = header["n_features"]
        for name in _FOREST_ARRAYS:
            setattr(forest, name, d[name])
    except (KeyError, TypeError, ValueError) as e:
        raise SerializationError(f"{path}: incomplete forest dump ({e})") from None
    return forest
