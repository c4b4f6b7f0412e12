"""Independent reference implementations used only by the tests."""
from __future__ import annotations

import itertools
from collections import deque

import networkx as nx
import numpy as np

from cystseg.layers import W_MIN


def dice_loops(p, g) -> float:
    h, w = p.shape
    both = n_p = n_g = 0
    for y in range(h):
        for x in range(w):
            a, b = bool(p[y, x]), bool(g[y, x])
            n_p += a
            n_g += b
            both += a and b
    if n_p + n_g == 0:
        return 1.0
    return 2.0 * both / (n_p + n_g)


def path_cost(g: np.ndarray, rows) -> float:
    """Left-to-right path cost summed in column order, virtual end edges included."""
    total = W_MIN
    for x in range(len(rows) - 1):
        a, b = (rows[x], x), (rows[x + 1], x + 1)
        total = total + ((2.0 + W_MIN) - (g[a] + g[b]))
    return total + W_MIN


def enumerate_min_path(g: np.ndarray) -> float:
    """Exhaustive minimum over every column-advancing path (dy in {-1, 0, 1})."""
    h, w = g.shape
    best = np.inf
    for start in range(h):
        for steps in itertools.product((-1, 0, 1), repeat=w - 1):
            rows = [start]
            for d in steps:
                rows.append(rows[-1] + d)
            if min(rows) < 0 or max(rows) >= h:
                continue
            best = min(best, path_cost(g, rows))
    return best


def dijkstra_min_path(g: np.ndarray) -> float:
    """Shortest path on the explicit pixel graph with virtual source and sink."""
    h, w = g.shape
    G = nx.DiGraph()
    for y in range(h):
        G.add_edge("s", (y, 0), weight=W_MIN)
        G.add_edge((y, w - 1), "t", weight=W_MIN)
        for x in range(w - 1):
            for dy in (-1, 0, 1):
                if 0 <= y + dy < h:
                    G.add_edge((y, x), (y + dy, x + 1),
                               weight=(2.0 + W_MIN) - (g[y, x] + g[y + dy, x + 1]))
    return nx.dijkstra_path_length(G, "s", "t")


def flood_components(img: np.ndarray, t: int) -> list[frozenset]:
    """4-connected components of ``img <= t`` by breadth-first flood fill."""
    h, w = img.shape
    seen = np.zeros((h, w), bool)
    out = []
    for y0 in range(h):
        for x0 in range(w):
            if seen[y0, x0] or img[y0, x0] > t:
                continue
            comp = []
            q = deque([(y0, x0)])
            seen[y0, x0] = True
            while q:
                y, x = q.popleft()
                comp.append((x, y))
                for ny, nx_ in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if 0 <= ny < h and 0 <= nx_ < w and not seen[ny, nx_] and img[ny, nx_] <= t:
                        seen[ny, nx_] = True
                        q.append((ny, nx_))
            out.append(frozenset(comp))
    return out


def all_level_components(img: np.ndarray) -> set:
    comps = set()
    for t in np.unique(img):
        comps.update(flood_components(img, int(t)))
    return comps


def separable_set(n: int = 200, margin: float = 1.0, seed: int = 0):
    """Two Gaussian-free uniform blobs in 2-D split by the line x0 + x1 = 0 with a gap."""
    rng = np.random.default_rng(seed)
    X, y = [], []
    while len(y) < n:
        p = rng.uniform(-5, 5, 2)
        s = (p[0] + p[1]) / np.sqrt(2.0)
        if abs(s) < margin / 2:
            continue
        X.append(p)
        y.append(int(s > 0))
    return np.array(X), np.array(y)
