"""Multi-scale centre-surround contrast for locally dark blobs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidScalePair, TooManyLevels
from .volume import resize_bilinear

BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
MIN_DIM = 8
DEFAULT_CENTERS = (1, 2)
DEFAULT_DELTAS = (2, 3)


@dataclass(frozen=True)
class PyramidLevel:
    level: int
    slice: np.ndarray


def reduce(img: np.ndarray) -> np.ndarray:
    """Separable binomial blur followed by decimation (floor of each dimension)."""
    blurred = ndimage.correlate1d(img, BINOMIAL5, axis=0, mode="reflect")
    blurred = ndimage.correlate1d(blurred, BINOMIAL5, axis=1, mode="reflect")
    h, w = img.shape
    return blurred[0:2 * (h // 2):2, 0:2 * (w // 2):2]


def gaussian_pyramid(s: np.ndarray, levels: int) -> list[PyramidLevel]:
    s = np.asarray(s, dtype=np.float64)
    if levels < 1:
        raise TooManyLevels("levels must be >= 1")
    need = MIN_DIM * 2 ** (levels - 1)
    if min(s.shape) < need:
        raise TooManyLevels(f"{levels} levels need both dimensions >= {need}, got {s.shape}")
    out = [PyramidLevel(0, s.copy())]
    for k in range(1, levels):
        out.append(PyramidLevel(k, reduce(out[-1].slice)))
    return out


def center_surround_dark(s: np.ndarray, centers=DEFAULT_CENTERS,
                         deltas=DEFAULT_DELTAS) -> np.ndarray:
    """Dark-centre saliency in [0, 1]: mean over scale pairs of
    ``max(0, surround - centre)``, scaled by its maximum."""
    centers, deltas = sorted(set(centers)), sorted(set(deltas))
    if not centers or not deltas or min(centers) < 0 or min(deltas) < 1:
        raise InvalidScalePair(f"bad scales: centers={centers}, deltas={deltas}")
    s = np.asarray(s, dtype=np.float64)
    depth = max(centers) + max(deltas) + 1
    try:
        pyr = gaussian_pyramid(s, depth)
    except TooManyLevels as exc:
        raise InvalidScalePair(str(exc)) from exc
    h, w = s.shape
    up = {}

    def full(level):
        if level not in up:
            up[level] = resize_bilinear(pyr[level].slice, w, h)
        return up[level]

    acc = np.zeros_like(s)
    for c in centers:
        for d in deltas:
            acc += np.maximum(full(c + d) - full(c), 0.0)
    acc /= len(centers) * len(deltas)
    top = acc.max()
    return acc / top if top > 0 else acc


def parse_scales(text: str):
    """``"c1,c2:d1,d2"`` -> ``((c1, c2), (d1, d2))``."""
    try:
        c, d = text.split(":")
        centers = tuple(int(v) for v in c.split(",") if v.strip())
        deltas = tuple(int(v) for v in d.split(",") if v.strip())
    except ValueError as exc:
        raise InvalidScalePair(f"cannot parse scales {text!r}") from exc
    if not centers or not deltas:
        raise InvalidScalePair(f"cannot parse scales {text!r}")
    return centers, deltas
