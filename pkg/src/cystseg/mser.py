"""Dark maximally stable extremal regions from a min-tree.

The min-tree holds the 4-connected components of the lower level sets
``{p : I(p) <= t}`` of an 8-bit slice.  Nodes are canonical: a component
that does not change between consecutive levels is one node, tagged with
the lowest level at which it exists.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .volume import BinaryMask

FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class MserParams:
    delta: int = 5
    min_area: int = 30
    max_area: int = 15000
    max_variation: float = 0.5
    min_diversity: float = 0.3

    def __post_init__(self):
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if self.min_area < 10 or self.max_area > 20000 or self.min_area > self.max_area:
            raise ValueError("need 10 <= min_area <= max_area <= 20000")
        if self.max_variation < 0:
            raise ValueError("max_variation must be >= 0")
        if not 0 <= self.min_diversity <= 1:
            raise ValueError("min_diversity must lie in [0, 1]")


@dataclass
class CandidateRegion:
    rows: np.ndarray
    cols: np.ndarray
    shape: tuple
    stability: float
    level: int = 0
    saliency_score: float = 0.0
    cyst_prob: float | None = None
    node: int = field(default=-1, repr=False)

    @property
    def area(self) -> int:
        return int(self.rows.size)

    @property
    def bbox(self) -> tuple:
        """``(x_min, y_min, x_max, y_max)``, inclusive."""
        return (int(self.cols.min()), int(self.rows.min()),
                int(self.cols.max()), int(self.rows.max()))

    @property
    def flat(self) -> np.ndarray:
        return np.ravel_multi_index((self.rows, self.cols), self.shape)

    @property
    def pixels(self) -> set:
        """Pixel set as ``{(x, y), ...}``."""
        return set(zip(self.cols.tolist(), self.rows.tolist()))

    def mask(self) -> np.ndarray:
        m = np.zeros(self.shape, bool)
        m[self.rows, self.cols] = True
        return m


class MinTree:
    """Canonical component tree of lower level sets (4-connectivity)."""

    def __init__(self, image, level, area, parent, seed):
        self.image = image
        self.level = level
        self.area = area
        self.parent = parent
        self.seed = seed

    def __len__(self):
        return self.level.size

    @property
    def root(self) -> int:
        return int(np.flatnonzero(self.parent < 0)[0])

    def children(self, n: int) -> np.ndarray:
        return np.flatnonzero(self.parent == n)

    def leaves(self) -> np.ndarray:
        has_child = np.zeros(len(self), bool)
        has_child[self.parent[self.parent >= 0]] = True
        return np.flatnonzero(~has_child)

    def pixels_of(self, nodes) -> dict:
        """Flat pixel indices for each requested node, labelling each level once."""
        nodes = list(nodes)
        out = {}
        by_level = {}
        for n in nodes:
            by_level.setdefault(int(self.level[n]), []).append(n)
        for t, group in by_level.items():
            labels, _ = ndimage.label(self.image <= t, structure=FOUR)
            flat = labels.ravel()
            for n in group:
                out[n] = np.flatnonzero(flat == flat[self.seed[n]])
        return out

    def ancestor_at(self, limit: np.ndarray) -> np.ndarray:
        """For every node, its highest ancestor (or itself) with level <= limit."""
        anc = np.arange(len(self))
        while True:
            p = self.parent[anc]
            move = (p >= 0)
            move[move] &= self.level[p[move]] <= limit[move]
            if not move.any():
                return anc
            anc[move] = p[move]


def quantize(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s)
    if s.dtype == np.uint8:
        return s
    return np.rint(np.clip(s, 0.0, 1.0) * 255.0).astype(np.uint8)


def _first_pixels(flat_labels: np.ndarray, n: int) -> np.ndarray:
    idx = np.flatnonzero(flat_labels)
    lab = flat_labels[idx]
    running = np.maximum.accumulate(lab)
    first = np.empty(lab.size, bool)
    first[0] = True
    first[1:] = running[1:] > running[:-1]
    seeds = idx[first]
    # ndimage.label numbers components in raster order of first pixel
    assert seeds.size == n
    return seeds


def build_min_tree(s: np.ndarray) -> MinTree:
    img = quantize(s)
    flat_img = img.ravel()
    levels, area_l, seed_l, parent_l = [], [], [], []
    n_nodes = 0
    prev_seeds = prev_area = prev_canon = None
    for t in np.unique(flat_img):
        labels, n = ndimage.label(img <= t, structure=FOUR)
        flat = labels.ravel()
        seeds = _first_pixels(flat, n)
        area = np.bincount(flat, minlength=n + 1)[1:]
        canon = np.empty(n, dtype=np.int64)
        if prev_seeds is None:
            fresh = np.ones(n, bool)
        else:
            owner = flat[prev_seeds] - 1  # component at t holding each previous one
            n_child = np.bincount(owner, minlength=n)
            child_area = np.bincount(owner, weights=prev_area, minlength=n)
            only = np.zeros(n, dtype=np.int64)
            only[owner] = np.arange(owner.size)
            same = (n_child == 1) & (child_area == area)
            fresh = ~same
            canon[same] = prev_canon[only[same]]
        k = int(fresh.sum())
        canon[fresh] = np.arange(n_nodes, n_nodes + k)
        n_nodes += k
        levels.append(np.full(k, t, dtype=np.int64))
        area_l.append(area[fresh].astype(np.int64))
        seed_l.append(seeds[fresh])
        parent_l.append(np.full(k, -1, dtype=np.int64))
        if prev_seeds is not None:
            moved = fresh[owner]
            parent_all = np.concatenate(parent_l)
            parent_all[prev_canon[moved]] = canon[owner[moved]]
            parent_l = [parent_all]
        prev_seeds, prev_area, prev_canon = seeds, area, canon
    return MinTree(img, np.concatenate(levels), np.concatenate(area_l),
                   np.concatenate(parent_l), np.concatenate(seed_l))


def variations(tree: MinTree, delta: int) -> np.ndarray:
    anc = tree.ancestor_at(tree.level + delta)
    return (tree.area[anc] - tree.area) / tree.area


def stable_nodes(tree: MinTree, delta: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes whose variation is a local minimum along the tree; returns
    ``(is_local_min, variation)``."""
    var = variations(tree, delta)
    has_parent = tree.parent >= 0
    var[~has_parent] = np.inf  # the whole image is never a candidate
    parent_var = np.full(len(tree), np.inf)
    parent_var[has_parent] = var[tree.parent[has_parent]]
    child_min = np.full(len(tree), np.inf)
    np.minimum.at(child_min, tree.parent[has_parent], var[has_parent])
    return (var < parent_var) & (var <= child_min), var


def _ancestors(tree: MinTree, n: int) -> set:
    out = set()
    p = tree.parent[n]
    while p >= 0:
        out.add(int(p))
        p = tree.parent[p]
    return out


def _prune_diversity(tree, nodes, var, min_diversity):
    order = sorted(nodes, key=lambda n: (var[n], tree.area[n], n))
    kept = []
    for n in order:
        anc = _ancestors(tree, n)
        dup = False
        for k in kept:
            if k in anc or n in _ancestors(tree, k):
                big, small = max(tree.area[n], tree.area[k]), min(tree.area[n], tree.area[k])
                if (big - small) / big < min_diversity:
                    dup = True
                    break
        if not dup:
            kept.append(n)
    return sorted(kept)


def mser_nodes(tree: MinTree, params: MserParams, prune: bool = True) -> tuple[list, np.ndarray]:
    is_min, var = stable_nodes(tree, params.delta)
    ok = is_min & (var <= params.max_variation)
    ok &= (tree.area >= params.min_area) & (tree.area <= params.max_area)
    nodes = [int(n) for n in np.flatnonzero(ok)]
    if prune:
        nodes = _prune_diversity(tree, nodes, var, params.min_diversity)
    return nodes, var


def detect_mser(s: np.ndarray, roi: BinaryMask | None = None, params: MserParams = MserParams(),
                saliency: np.ndarray | None = None, roi_fraction: float = 0.5) -> list[CandidateRegion]:
    """Dark MSER candidates of a slice, restricted to the ROI.

    A region survives when at least ``roi_fraction`` of its pixels lie in
    ``roi``.  ``saliency_score`` is the mean of ``saliency`` over the region.
    """
    img = quantize(s)
    tree = build_min_tree(img)
    nodes, var = mser_nodes(tree, params, prune=False)
    pix = tree.pixels_of(nodes)
    if roi is not None:
        roi_flat = roi.bits.ravel()
        nodes = [n for n in nodes if roi_flat[pix[n]].mean() >= roi_fraction]
    nodes = _prune_diversity(tree, nodes, var, params.min_diversity)
    sal = None if saliency is None else np.asarray(saliency, dtype=np.float64).ravel()
    out = []
    for n in nodes:
        rows, cols = np.unravel_index(pix[n], img.shape)
        score = float(sal[pix[n]].mean()) if sal is not None else 0.0
        out.append(CandidateRegion(rows.astype(np.intp), cols.astype(np.intp), img.shape,
                                   float(var[n]), int(tree.level[n]), score, node=n))
    return out
