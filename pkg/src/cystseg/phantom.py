"""Synthetic OCT-like phantoms with known layers, planted cysts and speckle.

Random numbers come from numpy's PCG64 generator seeded through
``SeedSequence``.  Every slice uses its own stream derived from
``(seed, slice_index)`` so slices can be generated in any order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InfeasibleSpec
from .layers import LayerBoundaries
from .volume import BinaryMask, MaskSource, OctVolume, Scanner

# clean-image intensity levels on [0, 1]
VITREOUS = 0.10
BAND = 0.60
CHOROID = 0.35
CYST = 0.05

MAX_ATTEMPTS = 1000
_CYST_MARGIN = 3  # rows kept clear of ILM/RPE
_CYST_GAP = 3     # pixels kept clear between cysts


@dataclass(frozen=True)
class PhantomSpec:
    n_slices: int = 6
    cysts_per_slice: tuple = (1, 3)
    cyst_area_range: tuple = (30, 3000)
    speckle_sigma: float = 0.3
    layer_amplitude: float = 8.0
    layer_period: float = 400.0
    seed: int = 0
    width: int = 512
    height: int = 256
    ilm_depth: float = 70.0
    rpe_depth: float = 175.0
    # explicit per-slice cyst areas; overrides cysts_per_slice/cyst_area_range
    cyst_areas: tuple | None = None
    volume_id: str = "phantom"

    def validate(self) -> None:
        lo, hi = self.cyst_area_range
        if not 10 <= lo <= hi <= 20000:
            raise InfeasibleSpec(f"cyst_area_range {self.cyst_area_range} outside [10, 20000]")
        if self.cyst_areas is not None and any(not 10 <= a <= 20000 for a in self.cyst_areas):
            raise InfeasibleSpec("explicit cyst areas must lie in [10, 20000]")
        cmin, cmax = self.cysts_per_slice
        if not 0 <= cmin <= cmax:
            raise InfeasibleSpec(f"bad cysts_per_slice {self.cysts_per_slice}")
        if self.speckle_sigma < 0:
            raise InfeasibleSpec("speckle_sigma must be >= 0")
        if self.n_slices < 1:
            raise InfeasibleSpec("n_slices must be >= 1")
        # worst-case gap between the two sinusoids (see _layer_rows)
        gap = (self.rpe_depth - self.ilm_depth) - 1.6 * abs(self.layer_amplitude) - 1
        if gap < 40:
            raise InfeasibleSpec("ILM/RPE gap must be at least 40 rows")
        if self.ilm_depth - abs(self.layer_amplitude) < 2 or \
                self.rpe_depth + abs(self.layer_amplitude) > self.height - 3:
            raise InfeasibleSpec("layers do not fit inside the slice")


@dataclass(frozen=True)
class Cyst:
    slice_index: int
    center: tuple  # (x, y)
    axes: tuple    # (horizontal, vertical) semi-axes
    area: int      # rasterized pixel count


@dataclass
class PhantomTruth:
    boundaries: list
    masks: list
    cyst_list: list = field(default_factory=list)


def rayleigh_field(width: int, height: int, sigma: float, seed) -> np.ndarray:
    """Unit-mean multiplicative Rayleigh speckle, ``height x width``.

    Samples use the inverse CDF ``sigma * sqrt(-2 ln(1 - u))`` with ``u`` in
    [0, 1) and are divided by the Rayleigh mean ``sigma * sqrt(pi / 2)``.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return np.ones((height, width))
    u = np.random.default_rng(seed).random((height, width))
    r = sigma * np.sqrt(-2.0 * np.log1p(-u))
    return r / (sigma * math.sqrt(math.pi / 2.0))


def _layer_rows(spec: PhantomSpec, phase: float):
    x = np.arange(spec.width)
    wave = np.sin(2 * np.pi * x / spec.layer_period + phase)
    ilm = np.rint(spec.ilm_depth + spec.layer_amplitude * wave).astype(int)
    rpe = np.rint(spec.rpe_depth + 0.6 * spec.layer_amplitude * wave).astype(int)
    return ilm, rpe


def _ellipse(cx, cy, a, b, width, height):
    x0, x1 = max(int(math.floor(cx - a)), 0), min(int(math.ceil(cx + a)), width - 1)
    y0, y1 = max(int(math.floor(cy - b)), 0), min(int(math.ceil(cy + b)), height - 1)
    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    inside = ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1.0
    return yy[inside], xx[inside]


def _place_cysts(rng, spec, areas, ilm, rpe, index):
    mask = np.zeros((spec.height, spec.width), bool)
    blocked = np.zeros_like(mask)
    cysts = []
    for area in areas:
        for _ in range(MAX_ATTEMPTS):
            aspect = rng.uniform(1.2, 2.2)
            a = math.sqrt(area * aspect / math.pi)
            b = a / aspect
            cx = rng.uniform(a + 1, spec.width - a - 2)
            lo = ilm.min() + b + _CYST_MARGIN
            hi = rpe.max() - b - _CYST_MARGIN
            if hi <= lo:
                continue
            cy = rng.uniform(lo, hi)
            ys, xs = _ellipse(cx, cy, a, b, spec.width, spec.height)
            if ys.size == 0:
                continue
            if np.any(ys <= ilm[xs] + _CYST_MARGIN) or np.any(ys >= rpe[xs] - _CYST_MARGIN):
                continue
            if blocked[ys, xs].any():
                continue
            mask[ys, xs] = True
            one = np.zeros_like(mask)
            one[ys, xs] = True
            blocked |= ndimage.binary_dilation(one, iterations=_CYST_GAP)
            cysts.append(Cyst(index, (cx, cy), (a, b), int(ys.size)))
            break
        else:
            raise InfeasibleSpec(
                f"slice {index}: could not place a cyst of area {area} "
                f"after {MAX_ATTEMPTS} attempts")
    return mask, cysts


def clean_slice(spec: PhantomSpec, ilm, rpe, mask) -> np.ndarray:
    rows = np.arange(spec.height)[:, None]
    img = np.full((spec.height, spec.width), CHOROID)
    img[rows <= ilm[None, :]] = VITREOUS
    img[(rows > ilm[None, :]) & (rows <= rpe[None, :])] = BAND
    img[mask] = CYST
    return img


def _slice_seed(seed: int, index: int, stream: int):
    return np.random.SeedSequence([seed, index, stream])


def generate_slice(spec: PhantomSpec, index: int):
    """One phantom slice: (uint8 image, boundaries, cyst mask, cysts)."""
    rng = np.random.default_rng(_slice_seed(spec.seed, index, 0))
    phase = rng.uniform(0, 2 * np.pi)
    ilm, rpe = _layer_rows(spec, phase)
    if spec.cyst_areas is not None:
        areas = list(spec.cyst_areas)
    else:
        n = int(rng.integers(spec.cysts_per_slice[0], spec.cysts_per_slice[1] + 1))
        lo, hi = spec.cyst_area_range
        # log-uniform so that small, medium and large cysts all occur
        areas = [int(round(math.exp(rng.uniform(math.log(lo), math.log(hi))))) for _ in range(n)]
    # place large cysts first; they are the hardest to fit
    order = sorted(range(len(areas)), key=lambda i: -areas[i])
    mask, cysts = _place_cysts(rng, spec, [areas[i] for i in order], ilm, rpe, index)
    img = clean_slice(spec, ilm, rpe, mask)
    noise = rayleigh_field(spec.width, spec.height, spec.speckle_sigma,
                           _slice_seed(spec.seed, index, 1))
    img = np.clip(img * noise, 0.0, 1.0)
    img8 = np.rint(img * 255.0).astype(np.uint8)
    return img8, LayerBoundaries(ilm, rpe), mask, cysts


def generate_phantom(spec: PhantomSpec) -> tuple[OctVolume, PhantomTruth]:
    """Build a phantom volume and its truth; deterministic in ``spec``.

    Grader 1 holds the exact cyst masks, grader 2 a one-pixel erosion of
    them, so the union of graders equals the planted truth.
    """
    spec.validate()
    slices, bounds, masks, cysts = [], [], [], []
    for i in range(spec.n_slices):
        img, b, m, c = generate_slice(spec, i)
        slices.append(img)
        bounds.append(b)
        masks.append(BinaryMask(m, MaskSource.Union))
        cysts.extend(c)
    g1 = tuple(BinaryMask(m.bits, MaskSource.Grader1) for m in masks)
    g2 = tuple(BinaryMask(ndimage.binary_erosion(m.bits), MaskSource.Grader2) for m in masks)
    volume = OctVolume(tuple(slices), Scanner.Synthetic, spec.volume_id, g1, g2)
    return volume, PhantomTruth(bounds, masks, cysts)
