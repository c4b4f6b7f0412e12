"""ILM / RPE boundary segmentation by minimum-weight paths on a column graph.

Every pixel is a node; edges join ``(y, x)`` to ``(y + dy, x + 1)`` for
``dy in {-1, 0, 1}`` with weight ``2 - (g_a + g_b) + W_MIN``, where ``g`` is
the polarity-rectified vertical gradient scaled to [0, 1].  Two virtual
end nodes attach to the first and last column with weight ``W_MIN``.  The
graph is a DAG, so the shortest path is a single dynamic-programming sweep.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, LayersCrossed
from .volume import BinaryMask, MaskSource

log = logging.getLogger(__name__)

W_MIN = 1e-5
DEFAULT_RPE_OFFSET = 10
DEFAULT_MAX_JUMP = 15


class Polarity(enum.Enum):
    DarkToLight = "DarkToLight"
    LightToDark = "LightToDark"


@dataclass(frozen=True)
class LayerBoundaries:
    ilm_row: np.ndarray
    rpe_row: np.ndarray

    def __post_init__(self):
        ilm = np.asarray(self.ilm_row, dtype=np.intp).copy()
        rpe = np.asarray(self.rpe_row, dtype=np.intp).copy()
        if ilm.shape != rpe.shape or ilm.ndim != 1:
            raise DimensionMismatch("ILM and RPE rows must be 1-D arrays of equal length")
        ilm.setflags(write=False)
        rpe.setflags(write=False)
        object.__setattr__(self, "ilm_row", ilm)
        object.__setattr__(self, "rpe_row", rpe)

    @property
    def width(self) -> int:
        return self.ilm_row.size

    def is_valid(self, height: int, max_jump: int = DEFAULT_MAX_JUMP) -> bool:
        ilm, rpe = self.ilm_row, self.rpe_row
        if not (np.all(ilm >= 0) and np.all(ilm < rpe) and np.all(rpe < height)):
            return False
        return bool(np.all(np.abs(np.diff(ilm)) <= max_jump)
                    and np.all(np.abs(np.diff(rpe)) <= max_jump))


class GradientWeights:
    """Rectified, [0, 1]-scaled vertical gradient and the edge weights built on it."""

    def __init__(self, g: np.ndarray):
        self.g = g

    @property
    def shape(self):
        return self.g.shape

    def weight(self, a, b) -> float:
        """Weight of the edge between pixels ``a`` and ``b`` given as ``(row, col)``."""
        return (2.0 + W_MIN) - (self.g[a] + self.g[b])

    def step_weights(self, x: int) -> np.ndarray:
        """``w[k, y]``: weight from ``(y + k - 1, x)`` to ``(y, x + 1)``; inf off-grid."""
        g0, g1 = self.g[:, x], self.g[:, x + 1]
        h = g0.size
        w = np.full((3, h), np.inf)
        base = 2.0 + W_MIN
        w[1] = base - (g0 + g1)
        w[0, 1:] = base - (g0[:-1] + g1[1:])   # from the row above
        w[2, :-1] = base - (g0[1:] + g1[:-1])  # from the row below
        return w


def rectified_gradient(s: np.ndarray, polarity: Polarity) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    g = np.zeros_like(s)
    diff = s[1:, :] - s[:-1, :]
    if Polarity(polarity) is Polarity.LightToDark:
        diff = -diff
    g[:-1, :] = np.maximum(diff, 0.0)
    return g


def _scaled(g: np.ndarray) -> np.ndarray:
    top = g.max() if g.size else 0.0
    return g / top if top > 0 else g


def build_gradient_weights(s: np.ndarray, polarity: Polarity,
                           exclude: np.ndarray | None = None) -> GradientWeights:
    """Edge weights for one slice; ``exclude`` marks pixels forced to zero gradient."""
    g = rectified_gradient(s, polarity)
    if exclude is not None:
        g[exclude] = 0.0
    return GradientWeights(_scaled(g))


def shortest_path(weights: GradientWeights):
    """Minimum-weight left-to-right path; returns ``(rows, total_weight)``.

    Ties go to the smaller row index.
    """
    h, w = weights.shape
    cost = np.full(h, W_MIN)
    back = np.zeros((w, h), dtype=np.int8)
    rows_idx = np.arange(h)
    for x in range(w - 1):
        sw = weights.step_weights(x)
        cand = np.full((3, h), np.inf)
        cand[0, 1:] = cost[:-1] + sw[0, 1:]
        cand[1] = cost + sw[1]
        cand[2, :-1] = cost[1:] + sw[2, :-1]
        # argmin picks the first minimum: predecessor row y-1 before y before y+1
        k = np.argmin(cand, axis=0)
        cost = cand[k, rows_idx]
        back[x + 1] = k - 1
    final = cost + W_MIN
    y = int(np.argmin(final))
    total = float(final[y])
    rows = np.empty(w, dtype=np.intp)
    rows[-1] = y
    for x in range(w - 1, 0, -1):
        y += int(back[x, y])
        rows[x - 1] = y
    return rows, total


def path_weight(weights: GradientWeights, rows) -> float:
    """Total weight of a path given one row per column, virtual ends included."""
    total = W_MIN
    for x in range(len(rows) - 1):
        if abs(int(rows[x + 1]) - int(rows[x])) > 1:
            return float("inf")
        total = total + weights.weight((rows[x], x), (rows[x + 1], x + 1))
    return total + W_MIN


def shortest_boundary(s: np.ndarray, polarity: Polarity,
                      exclude: np.ndarray | None = None) -> np.ndarray:
    return shortest_path(build_gradient_weights(s, polarity, exclude))[0]


def _fluid_below(s: np.ndarray, ilm: np.ndarray, depth: int = 3) -> np.ndarray:
    """Pixels whose next ``depth`` rows are as dark as fluid.

    Cyst tops are light-to-dark edges too; the RPE is told apart because
    the tissue under it (choroid) is brighter than fluid.  The threshold
    sits halfway between the vitreous level (above the ILM) and the level
    of the bottom rows of the slice.
    """
    h = s.shape[0]
    vitreous = s[np.arange(h)[:, None] <= ilm[None, :]]
    if vitreous.size == 0:
        return np.zeros(s.shape, bool)
    fluid = float(np.median(vitreous))
    floor = float(np.median(s[-max(h // 10, 1):, :]))
    if floor <= fluid:
        return np.zeros(s.shape, bool)
    cut = 0.5 * (fluid + floor)
    pad = np.vstack([s, np.repeat(s[-1:, :], depth, axis=0)])
    below = sum(pad[k:k + h, :] for k in range(1, depth + 1)) / depth
    return below < cut


def segment_layers(s: np.ndarray, rpe_offset: int = DEFAULT_RPE_OFFSET,
                   max_jump: int = DEFAULT_MAX_JUMP) -> LayerBoundaries:
    """ILM and RPE rows of a denoised float slice.

    The ILM is the best vitreous-to-retina (dark-to-light) path.  The RPE is
    the best retina-to-choroid (light-to-dark) path restricted to rows at
    least ``rpe_offset`` below the ILM.
    """
    s = np.asarray(s, dtype=np.float64)
    h, w = s.shape
    if rectified_gradient(s, Polarity.DarkToLight).max() <= 0:
        raise LayersCrossed("no dark-to-light gradient: cannot place the ILM")
    ilm = shortest_boundary(s, Polarity.DarkToLight)
    rows = np.arange(h)[:, None]
    above = rows < (ilm + rpe_offset)[None, :]
    exclude = above | _fluid_below(s, ilm)
    if np.all(rectified_gradient(s, Polarity.LightToDark)[~exclude] <= 0):
        raise LayersCrossed("no light-to-dark gradient below the ILM")
    rpe = shortest_boundary(s, Polarity.LightToDark, exclude=exclude)
    b = LayerBoundaries(ilm, rpe)
    if not b.is_valid(h, max_jump):
        raise LayersCrossed("ILM/RPE ordering or continuity violated")
    return b


def roi_mask(b: LayerBoundaries, width: int, height: int) -> BinaryMask:
    """Pixels strictly between the ILM and RPE rows of their column."""
    if b.width != width:
        raise DimensionMismatch(f"boundaries cover {b.width} columns, slice has {width}")
    rows = np.arange(height)[:, None]
    bits = (rows > b.ilm_row[None, :]) & (rows < b.rpe_row[None, :])
    return BinaryMask(bits, MaskSource.Prediction)


def full_roi(width: int, height: int) -> BinaryMask:
    return BinaryMask(np.ones((height, width), bool), MaskSource.Prediction)
