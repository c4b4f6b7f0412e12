"""Texture descriptor for candidate regions.

The vector has 69 entries: a 59-bin uniform LBP(8,1) histogram of the
padded bounding-box patch followed by 10 region/patch scalars.
"""
from __future__ import annotations

import numpy as np

from .errors import DegenerateRegion
from .layers import LayerBoundaries
from .mser import CandidateRegion

N_LBP_BINS = 59
AUX_NAMES = (
    "mean", "std", "min", "max", "area_frac", "aspect", "fill",
    "saliency", "depth_in_roi", "grad_mag",
)
FEATURE_LENGTH = N_LBP_BINS + len(AUX_NAMES)
PATCH_PAD = 4
GRID_AREA = 512 * 256

# clockwise from the top-left neighbour; neighbour k sets bit k
NEIGHBOURS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def _transitions(code: int) -> int:
    bits = [(code >> k) & 1 for k in range(8)]
    return sum(bits[k] != bits[(k + 1) % 8] for k in range(8))


def _uniform_table() -> np.ndarray:
    table = np.full(256, N_LBP_BINS - 1, dtype=np.intp)
    uniform = [c for c in range(256) if _transitions(c) <= 2]
    assert len(uniform) == N_LBP_BINS - 1
    table[uniform] = np.arange(len(uniform))
    return table


UNIFORM_BIN = _uniform_table()


def lbp_codes(patch: np.ndarray) -> np.ndarray:
    """8-neighbour LBP code of every pixel; a bit is set when the neighbour is
    strictly brighter than the centre.  Borders are edge-replicated."""
    p = np.asarray(patch, dtype=np.float64)
    padded = np.pad(p, 1, mode="edge")
    h, w = p.shape
    codes = np.zeros((h, w), dtype=np.intp)
    for k, (dy, dx) in enumerate(NEIGHBOURS):
        nb = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        codes |= (nb > p).astype(np.intp) << k
    return codes


def lbp_histogram(patch: np.ndarray) -> np.ndarray:
    bins = UNIFORM_BIN[lbp_codes(patch)]
    hist = np.bincount(bins.ravel(), minlength=N_LBP_BINS).astype(np.float64)
    return hist / hist.sum()


def padded_bbox(r: CandidateRegion, shape, pad: int = PATCH_PAD):
    x0, y0, x1, y1 = r.bbox
    h, w = shape
    return max(x0 - pad, 0), max(y0 - pad, 0), min(x1 + pad, w - 1), min(y1 + pad, h - 1)


def extract_features(s: np.ndarray, saliency: np.ndarray | None, r: CandidateRegion,
                     layers: LayerBoundaries | None = None) -> np.ndarray:
    """Feature vector of one candidate on a float slice in [0, 1]."""
    if r.area < 4:
        raise DegenerateRegion(f"region area {r.area} < 4")
    s = np.asarray(s, dtype=np.float64)
    x0, y0, x1, y1 = padded_bbox(r, s.shape)
    patch = s[y0:y1 + 1, x0:x1 + 1]
    bx0, by0, bx1, by1 = r.bbox
    bw, bh = bx1 - bx0 + 1, by1 - by0 + 1
    if saliency is not None:
        sal = float(np.asarray(saliency)[r.rows, r.cols].mean())
    else:
        sal = r.saliency_score
    cy = float(r.rows.mean())
    if layers is not None:
        cx = int(round(float(r.cols.mean())))
        top, bottom = layers.ilm_row[cx], layers.rpe_row[cx]
        depth = (cy - top) / max(bottom - top, 1)
    else:
        depth = cy / s.shape[0]
    gy, gx = np.gradient(patch) if min(patch.shape) > 1 else (np.zeros_like(patch),) * 2
    aux = np.array([
        patch.mean(), patch.std(), patch.min(), patch.max(),
        r.area / GRID_AREA, bw / bh, r.area / (bw * bh),
        sal, depth, np.hypot(gx, gy).mean(),
    ])
    return np.concatenate([lbp_histogram(patch), aux])
