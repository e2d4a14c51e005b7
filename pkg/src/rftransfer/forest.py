"""Random-forest regression: CART trees with MSE splitting, bagged by bootstrap.

Trees are stored as flat node arrays (one concatenated block for the whole
forest) so prediction is a single compiled loop.  A node with
``feature == -1`` is a leaf; samples go left when ``x[feature] <= threshold``.
"""
import math
import os
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numba
import numpy as np

from .exceptions import DimensionError, InputError, ModelFormatError, NumericError

FORMAT_TAG = "rftransfer-forest"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: Optional[int] = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_features_fraction: float = 1.0
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise InputError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth is not None and self.max_depth < 1:
            raise InputError(f"max_depth must be >= 1 or None, got {self.max_depth}")
        if self.min_samples_split < 2:
            raise InputError(
                f"min_samples_split must be >= 2, got {self.min_samples_split}")
        if self.min_samples_leaf < 1:
            raise InputError(
                f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")
        if not 0.0 < self.max_features_fraction <= 1.0:
            raise InputError("max_features_fraction must lie in (0, 1], got "
                             f"{self.max_features_fraction}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Inputs ``X`` (n x d) with targets ``y`` (n,)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim == 1:
            X = X.reshape(-1, 1) if X.size == y.size else X.reshape(1, -1)
        if X.ndim != 2:
            raise DimensionError(f"X must be 2-D, got shape {X.shape}")
        if X.shape[0] != y.size:
            raise DimensionError(
                f"X has {X.shape[0]} rows but y has {y.size} entries")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise NumericError("dataset contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.X[idx], self.y[idx])

    def __len__(self):
        return self.n


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self):
        return self.feature.size

    @property
    def n_leaves(self):
        return int(np.sum(self.feature < 0))


@dataclass(frozen=True, eq=False)
class ForestModel:
    """Fitted forest.  Child indices in ``left``/``right`` are global."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray
    d: int
    params: ForestParams

    @property
    def n_trees(self):
        return self.roots.size

    @property
    def trees(self):
        bounds = list(self.roots) + [self.feature.size]
        out = []
        for start, stop in zip(bounds[:-1], bounds[1:]):
            sl = slice(start, stop)
            left = self.left[sl].copy()
            right = self.right[sl].copy()
            internal = self.feature[sl] >= 0
            left[internal] -= start
            right[internal] -= start
            out.append(Tree(self.feature[sl].copy(), self.threshold[sl].copy(),
                            left, right, self.value[sl].copy()))
        return out

    @classmethod
    def from_trees(cls, trees, d, params=None):
        if not trees:
            raise InputError("a forest needs at least one tree")
        params = params or ForestParams(n_trees=len(trees))
        roots, feats, thrs, lefts, rights, vals = [], [], [], [], [], []
        offset = 0
        for t in trees:
            roots.append(offset)
            internal = np.asarray(t.feature) >= 0
            feats.append(np.asarray(t.feature, dtype=np.int64))
            thrs.append(np.asarray(t.threshold, dtype=float))
            lefts.append(np.where(internal, np.asarray(t.left) + offset, -1))
            rights.append(np.where(internal, np.asarray(t.right) + offset, -1))
            vals.append(np.asarray(t.value, dtype=float))
            offset += len(t.feature)
        model = cls(np.concatenate(feats), np.concatenate(thrs),
                    np.concatenate(lefts).astype(np.int64),
                    np.concatenate(rights).astype(np.int64),
                    np.concatenate(vals), np.asarray(roots, dtype=np.int64),
                    int(d), params)
        model.validate()
        return model

    def validate(self):
        if self.roots.size == 0:
            raise InputError("empty forest")
        n = self.feature.size
        for arr in (self.threshold, self.left, self.right, self.value):
            if arr.size != n:
                raise ModelFormatError("node arrays have inconsistent lengths")
        if np.any(self.feature >= self.d):
            raise ModelFormatError("split feature index exceeds dimension")
        internal = self.feature >= 0
        kids = np.concatenate([self.left[internal], self.right[internal]])
        if kids.size and (kids.min() < 0 or kids.max() >= n):
            raise ModelFormatError("child index out of range")
        if not np.all(np.isfinite(self.value[~internal])):
            raise ModelFormatError("non-finite leaf value")
        if np.any((self.roots < 0) | (self.roots >= n)):
            raise ModelFormatError("root index out of range")

    def _kernel_arrays(self):
        packed = self.__dict__.get("_packed")
        if packed is None:
            leaf = self.feature < 0
            packed = (self.feature.astype(np.int32),
                      np.where(leaf, self.value, self.threshold),
                      np.ascontiguousarray(
                          np.stack([self.left, self.right], axis=1).astype(np.int32)),
                      self.roots.astype(np.int64))
            object.__setattr__(self, "_packed", packed)
        return packed

    def predict(self, x):
        return predict(self, x)

    def predict_batch(self, X):
        return predict_batch(self, X)


# ---------------------------------------------------------------------------
# compiled kernels

@numba.njit(cache=True)
def _splitmix64(state):
    state = (state + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = state
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    return state, z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def _best_split(X, y, idx, features, min_leaf):
    """Exhaustive midpoint search; returns (feature, threshold, sse)."""
    m = idx.size
    best_f = -1
    best_t = 0.0
    best_sse = np.inf
    mean = 0.0
    for i in range(m):
        mean += y[idx[i]]
    mean /= m
    xs = np.empty(m)
    ys = np.empty(m)
    for f in features:
        for i in range(m):
            xs[i] = X[idx[i], f]
        order = np.argsort(xs, kind="mergesort")
        sx = xs[order]
        if sx[0] == sx[m - 1]:
            continue
        for i in range(m):
            ys[i] = y[idx[order[i]]] - mean
        tot_s = 0.0
        tot_q = 0.0
        for i in range(m):
            tot_s += ys[i]
            tot_q += ys[i] * ys[i]
        ls = 0.0
        lq = 0.0
        for i in range(1, m):
            ls += ys[i - 1]
            lq += ys[i - 1] * ys[i - 1]
            if i < min_leaf or m - i < min_leaf:
                continue
            if sx[i - 1] == sx[i]:
                continue
            rs = tot_s - ls
            rq = tot_q - lq
            sse = (lq - ls * ls / i) + (rq - rs * rs / (m - i))
            if sse < best_sse:
                best_sse = sse
                best_f = f
                thr = 0.5 * (sx[i - 1] + sx[i])
                if thr >= sx[i]:
                    thr = sx[i - 1]
                best_t = thr
    return best_f, best_t, best_sse


@numba.njit(cache=True, nogil=True)
def _grow_tree(X, y, sample_idx, n_features_split, max_depth,
               min_samples_split, min_samples_leaf, seed):
    n = sample_idx.size
    d = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)

    state = np.uint64(seed)
    perm = np.arange(d)

    # stack of (node id, start, stop, depth) over a working index buffer
    work = sample_idx.copy()
    stack_node = np.empty(cap, dtype=np.int64)
    stack_lo = np.empty(cap, dtype=np.int64)
    stack_hi = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int64)
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    stack_depth[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        depth = stack_depth[top]
        idx = work[lo:hi]
        m = hi - lo

        s = 0.0
        ymin = np.inf
        ymax = -np.inf
        for i in range(m):
            v = y[idx[i]]
            s += v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        value[node] = s / m

        if (ymin == ymax or m < min_samples_split or m < 2 * min_samples_leaf
                or (max_depth >= 0 and depth >= max_depth)):
            continue

        if n_features_split < d:
            # partial Fisher-Yates, then ascending order for tie-breaking
            for j in range(n_features_split):
                state, r = _splitmix64(state)
                k = j + np.int64(r % np.uint64(d - j))
                tmp = perm[j]
                perm[j] = perm[k]
                perm[k] = tmp
            feats = np.sort(perm[:n_features_split].copy())
        else:
            feats = perm

        f, t, sse = _best_split(X, y, idx, feats, min_samples_leaf)
        if f < 0:
            continue
        parent = 0.0
        mean = s / m
        for i in range(m):
            dv = y[idx[i]] - mean
            parent += dv * dv
        if not sse < parent:
            continue

        # stable partition of idx around the threshold
        buf = idx.copy()
        nl = 0
        for i in range(m):
            if X[buf[i], f] <= t:
                work[lo + nl] = buf[i]
                nl += 1
        k = nl
        for i in range(m):
            if X[buf[i], f] > t:
                work[lo + k] = buf[i]
                k += 1

        feature[node] = f
        threshold[node] = t
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        # push right first so the left subtree is numbered depth-first
        stack_node[top] = rnode
        stack_lo[top] = lo + nl
        stack_hi[top] = hi
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = lnode
        stack_lo[top] = lo
        stack_hi[top] = lo + nl
        stack_depth[top] = depth + 1
        top += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(), value[:n_nodes].copy())


@numba.njit(cache=True, nogil=True)
def _predict_flat(X, feature, key, child, roots):
    # tree-outer loop keeps one tree hot in cache; the child lookup is
    # branchless.  ``key`` holds thresholds for splits and values for leaves.
    n = X.shape[0]
    n_trees = roots.size
    acc = np.zeros(n)
    for t in range(n_trees):
        root = roots[t]
        for i in range(n):
            node = root
            f = feature[node]
            while f >= 0:
                node = child[node, np.int32(X[i, f] > key[node])]
                f = feature[node]
            acc[i] += key[node]
    return acc / n_trees


# ---------------------------------------------------------------------------
# public API

def _tree_streams(rng, n_trees):
    """One independent SeedSequence per tree (stream index = tree index)."""
    if isinstance(rng, np.random.SeedSequence):
        root = rng
    else:
        gen = np.random.default_rng(rng)
        root = np.random.SeedSequence(gen.integers(0, 2**63 - 1, size=4))
    return root.spawn(n_trees)


def fit_forest(data, params=None, rng=None, n_jobs=1):
    """Fit a bagged CART forest.  Deterministic for a fixed ``rng`` seed."""
    params = params or ForestParams()
    if not isinstance(data, Dataset):
        raise InputError("fit_forest expects a Dataset")
    if data.n < 1:
        raise InputError("cannot fit a forest on an empty dataset")
    if data.d < 1:
        raise InputError("dataset has no input columns")
    X = np.ascontiguousarray(data.X)
    y = np.ascontiguousarray(data.y)
    n, d = X.shape
    k = max(1, math.ceil(params.max_features_fraction * d))
    max_depth = -1 if params.max_depth is None else params.max_depth
    streams = _tree_streams(rng, params.n_trees)

    def grow(ss):
        gen = np.random.default_rng(ss)
        if params.bootstrap:
            idx = gen.integers(0, n, size=n)
        else:
            idx = np.arange(n)
        seed = int(gen.integers(0, 2**63 - 1))
        parts = _grow_tree(X, y, idx.astype(np.int64), k, max_depth,
                           params.min_samples_split, params.min_samples_leaf,
                           seed)
        return Tree(*parts)

    if n_jobs is None or n_jobs == 1:
        trees = [grow(ss) for ss in streams]
    else:
        workers = os.cpu_count() if n_jobs < 0 else n_jobs
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trees = list(pool.map(grow, streams))
    return ForestModel.from_trees(trees, d, params)


def predict_batch(model, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1 and X.size == 0:
        return np.empty(0)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise DimensionError(
            f"expected inputs with {model.d} columns, got shape {X.shape}")
    if X.shape[0] == 0:
        return np.empty(0)
    return _predict_flat(np.ascontiguousarray(X), *model._kernel_arrays())


def predict(model, x):
    x = np.asarray(x, dtype=float).ravel()
    if x.size != model.d:
        raise DimensionError(f"expected a {model.d}-vector, got length {x.size}")
    return float(predict_batch(model, x.reshape(1, -1))[0])


def save_model(model, path):
    """Write ``model`` as a versioned ``.npz`` container."""
    if model is None or model.n_trees == 0 or model.feature.size == 0:
        raise InputError("refusing to save an empty forest")
    model.validate()
    path = Path(path)
    meta = {k: ("" if v is None else v) for k, v in asdict(model.params).items()}
    try:
        with open(path, "wb") as fh:
            np.savez(fh, format_tag=np.array(FORMAT_TAG),
                     format_version=np.array(FORMAT_VERSION),
                     d=np.array(model.d), feature=model.feature,
                     threshold=model.threshold, left=model.left,
                     right=model.right, value=model.value, roots=model.roots,
                     **{f"param_{k}": np.array(v) for k, v in meta.items()})
    except OSError as exc:
        raise OSError(f"cannot write model to {path}: {exc}") from exc
    return path


def load_model(path):
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except FileNotFoundError:
        raise
    except (zipfile.BadZipFile, ValueError, OSError, EOFError, KeyError) as exc:
        raise ModelFormatError(f"{path}: not a readable model file ({exc})") from exc
    try:
        if str(arrays["format_tag"]) != FORMAT_TAG:
            raise ModelFormatError(f"{path}: unexpected format tag")
        version = int(arrays["format_version"])
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"{path}: unsupported format version {version}")
        max_depth = arrays["param_max_depth"].item()
        params = ForestParams(
            n_trees=int(arrays["param_n_trees"]),
            max_depth=None if max_depth == "" else int(max_depth),
            min_samples_split=int(arrays["param_min_samples_split"]),
            min_samples_leaf=int(arrays["param_min_samples_leaf"]),
            max_features_fraction=float(arrays["param_max_features_fraction"]),
            bootstrap=bool(arrays["param_bootstrap"]),
        )
        model = ForestModel(
            arrays["feature"].astype(np.int64), arrays["threshold"].astype(float),
            arrays["left"].astype(np.int64), arrays["right"].astype(np.int64),
            arrays["value"].astype(float), arrays["roots"].astype(np.int64),
            int(arrays["d"]), params)
    except KeyError as exc:
        raise ModelFormatError(f"{path}: missing field {exc}") from exc
    except (TypeError, ValueError, InputError) as exc:
        raise ModelFormatError(f"{path}: malformed field ({exc})") from exc
    model.validate()
    return model
