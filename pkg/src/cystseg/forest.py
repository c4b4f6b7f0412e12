"""Random forest of Gini decision trees, plus the OCSF model file format.

OCSF layout (all little-endian)::

    4s   magic "OCSF"
    u32  format_version
    u32  n_trees
    u32  n_features
    u32  feature_subset_size
    u64  train_seed
    u32  max_depth
    u32  min_samples_split
    f64  oob_accuracy (NaN when not computed)
    per tree:
        u32  n_nodes
        n_nodes x {i32 feature (-1 = leaf), f64 threshold, i32 left,
                   i32 right, f64 count_noncyst, f64 count_cyst}
"""
from __future__ import annotations

import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptModelFile,
    FeatureLengthMismatch,
    SingleClassTrainingSet,
    TooFewSamples,
    VersionMismatch,
)

N_TREES = 50
MAX_DEPTH = 16
MIN_SAMPLES_SPLIT = 3
MIN_TRAINING_ROWS = 20
FORMAT_VERSION = 1
MAGIC = b"OCSF"

_HEADER = struct.Struct("<4sIIIIQIId")
_COUNT = struct.Struct("<I")
NODE_DTYPE = np.dtype([
    ("feature", "<i4"), ("threshold", "<f8"), ("left", "<i4"),
    ("right", "<i4"), ("count0", "<f8"), ("count1", "<f8"),
])


@dataclass
class Tree:
    nodes: np.ndarray  # structured NODE_DTYPE array, node 0 is the root

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        nodes = self.nodes
        idx = np.zeros(X.shape[0], dtype=np.intp)
        active = nodes["feature"][idx] >= 0
        while active.any():
            cur = idx[active]
            f = nodes["feature"][cur]
            go_left = X[np.flatnonzero(active), f] <= nodes["threshold"][cur]
            idx[active] = np.where(go_left, nodes["left"][cur], nodes["right"][cur])
            active = nodes["feature"][idx] >= 0
        return idx

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        leaf = self.nodes[self.leaf_index(X)]
        return leaf["count1"] / (leaf["count0"] + leaf["count1"])


@dataclass
class ForestModel:
    trees: list
    n_features: int
    feature_subset_size: int
    train_seed: int = 0
    max_depth: int = MAX_DEPTH
    min_samples_split: int = MIN_SAMPLES_SPLIT
    oob_accuracy: float = float("nan")
    format_version: int = FORMAT_VERSION

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict_proba(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise FeatureLengthMismatch(
                f"expected {self.n_features} features, got {X.shape[1]}")
        total = np.zeros(X.shape[0])
        for t in self.trees:
            total += t.predict_proba(X)
        return total / len(self.trees)


def predict(model: ForestModel, f) -> float:
    """Cyst probability of one feature vector: mean leaf cyst fraction over trees."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 1 or f.size != model.n_features:
        raise FeatureLengthMismatch(f"expected {model.n_features} features, got {f.size}")
    return float(model.predict_proba(f[None, :])[0])


@dataclass
class TrainingSet:
    X: np.ndarray
    y: np.ndarray  # 1 = cyst, 0 = non-cyst
    provenance: tuple = field(default=())

    def __len__(self):
        return int(self.y.size)


def _gini_split(x: np.ndarray, y: np.ndarray):
    """Best threshold on one feature: ``(weighted_impurity, threshold)`` or None."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = xs.size
    valid = np.flatnonzero(xs[1:] != xs[:-1]) + 1  # left size at each cut
    if valid.size == 0:
        return None
    ones = np.cumsum(ys)[valid - 1].astype(np.float64)
    n_l = valid.astype(np.float64)
    n_r = n - n_l
    p_l = ones / n_l
    p_r = (ys.sum() - ones) / n_r
    imp = n_l * 2 * p_l * (1 - p_l) + n_r * 2 * p_r * (1 - p_r)
    k = int(np.argmin(imp))
    lo, hi = xs[valid[k] - 1], xs[valid[k]]
    thr = lo + (hi - lo) / 2
    if not thr < hi:
        thr = lo
    return float(imp[k]), float(thr)


def _grow_tree(X, y, rng, subset, max_depth, min_samples_split) -> Tree:
    nodes = []
    stack = [(np.arange(y.size), 0, -1, False)]
    while stack:
        idx, depth, parent, is_right = stack.pop()
        me = len(nodes)
        if parent >= 0:
            nodes[parent]["right" if is_right else "left"] = me
        ones = float(y[idx].sum())
        node = {"feature": -1, "threshold": 0.0, "left": -1, "right": -1,
                "count0": idx.size - ones, "count1": ones}
        nodes.append(node)
        if ones == 0 or ones == idx.size or depth >= max_depth or idx.size < min_samples_split:
            continue
        best = None
        for f in rng.choice(X.shape[1], size=subset, replace=False):
            res = _gini_split(X[idx, f], y[idx])
            if res is not None and (best is None or res[0] < best[0]):
                best = (res[0], res[1], int(f))
        if best is None:
            continue
        _, thr, f = best
        node["feature"], node["threshold"] = f, thr
        go_left = X[idx, f] <= thr
        # right pushed first so the left subtree gets the lower node ids
        stack.append((idx[~go_left], depth + 1, me, True))
        stack.append((idx[go_left], depth + 1, me, False))
    arr = np.zeros(len(nodes), dtype=NODE_DTYPE)
    for i, n in enumerate(nodes):
        arr[i] = (n["feature"], n["threshold"], n["left"], n["right"], n["count0"], n["count1"])
    return Tree(arr)


def _fit_one(args):
    X, y, seed, index, subset, max_depth, min_samples_split = args
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    boot = rng.integers(0, y.size, y.size)
    tree = _grow_tree(X[boot], y[boot], rng, subset, max_depth, min_samples_split)
    oob = np.ones(y.size, bool)
    oob[boot] = False
    return tree, oob


def train_forest(t: TrainingSet, seed: int = 0, max_depth: int = MAX_DEPTH,
                 min_samples_split: int = MIN_SAMPLES_SPLIT, jobs: int = 1) -> ForestModel:
    """Fit the 50-tree forest; bootstrap rows and feature draws per tree come
    from the stream ``(seed, tree_index)`` so results do not depend on ``jobs``."""
    X = np.asarray(t.X, dtype=np.float64)
    y = np.asarray(t.y).astype(np.int64)
    if y.size < MIN_TRAINING_ROWS:
        raise TooFewSamples(f"{y.size} rows; at least {MIN_TRAINING_ROWS} needed")
    if np.unique(y).size < 2:
        raise SingleClassTrainingSet("training set holds a single class")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    subset = max(1, int(math.isqrt(X.shape[1])))
    work = [(X, y, seed, i, subset, max_depth, min_samples_split) for i in range(N_TREES)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            fitted = list(ex.map(_fit_one, work))
    else:
        fitted = [_fit_one(w) for w in work]
    trees = [tr for tr, _ in fitted]
    votes = np.zeros(y.size)
    seen = np.zeros(y.size)
    for tr, oob in fitted:
        if oob.any():
            votes[oob] += tr.predict_proba(X[oob])
            seen[oob] += 1
    covered = seen > 0
    if covered.any():
        pred = (votes[covered] / seen[covered]) >= 0.5
        oob_acc = float(np.mean(pred == (y[covered] == 1)))
    else:
        oob_acc = float("nan")
    return ForestModel(trees, X.shape[1], subset, seed, max_depth, min_samples_split, oob_acc)


def model_bytes(m: ForestModel) -> bytes:
    parts = [_HEADER.pack(MAGIC, m.format_version, m.n_trees, m.n_features,
                          m.feature_subset_size, m.train_seed, m.max_depth,
                          m.min_samples_split, m.oob_accuracy)]
    for t in m.trees:
        parts.append(_COUNT.pack(t.nodes.size))
        parts.append(t.nodes.astype(NODE_DTYPE).tobytes())
    return b"".join(parts)


def save_model(m: ForestModel, path) -> None:
    Path(path).write_bytes(model_bytes(m))


def parse_model(buf: bytes) -> ForestModel:
    if len(buf) < _HEADER.size:
        raise CorruptModelFile("model file truncated in header")
    magic, version, n_trees, n_feat, subset, seed, depth, mss, oob = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise CorruptModelFile("bad magic bytes")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"model format {version}, this build reads {FORMAT_VERSION}")
    pos = _HEADER.size
    trees = []
    for _ in range(n_trees):
        if pos + _COUNT.size > len(buf):
            raise CorruptModelFile("model file truncated")
        (n_nodes,) = _COUNT.unpack_from(buf, pos)
        pos += _COUNT.size
        end = pos + n_nodes * NODE_DTYPE.itemsize
        if end > len(buf) or n_nodes == 0:
            raise CorruptModelFile("model file truncated")
        nodes = np.frombuffer(buf[pos:end], dtype=NODE_DTYPE).copy()
        pos = end
        inner = nodes["feature"] >= 0
        kids = np.concatenate([nodes["left"][inner], nodes["right"][inner]])
        if np.any(nodes["feature"][inner] >= n_feat) or np.any((kids <= 0) | (kids >= n_nodes)):
            raise CorruptModelFile("node references out of range")
        trees.append(Tree(nodes))
    if pos != len(buf):
        raise CorruptModelFile("trailing bytes after the last tree")
    return ForestModel(trees, n_feat, subset, seed, depth, mss, oob, version)


def load_model(path) -> ForestModel:
    return parse_model(Path(path).read_bytes())
