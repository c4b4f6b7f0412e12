"""Dice, per-volume statistics, size-stratified detection and report I/O."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch, EmptyAfterExclusion
from .volume import BinaryMask

SMALL_MAX = 200    # Small: area < 200
LARGE_MIN = 2000   # Large: area > 2000; Medium in between, both ends inclusive
FOUR = ndimage.generate_binary_structure(2, 1)


class SizeClass(enum.Enum):
    Small = "Small"
    Medium = "Medium"
    Large = "Large"


class Stage(enum.Enum):
    PostMser = "PostMser"
    PostForest = "PostForest"


def size_class(area: int) -> SizeClass:
    if area < SMALL_MAX:
        return SizeClass.Small
    if area <= LARGE_MIN:
        return SizeClass.Medium
    return SizeClass.Large


def _bits(m) -> np.ndarray:
    return m.bits if isinstance(m, BinaryMask) else np.asarray(m, dtype=bool)


def dice(pred, gt) -> float:
    """``2 |P & G| / (|P| + |G|)``; two empty masks score 1.0."""
    p, g = _bits(pred), _bits(gt)
    if p.shape != g.shape:
        raise DimensionMismatch(f"mask shapes differ: {p.shape} vs {g.shape}")
    total = int(np.count_nonzero(p)) + int(np.count_nonzero(g))
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(p & g)) / total


@dataclass(frozen=True)
class Stats:
    mean: float
    max: float
    std: float


def volume_stats(dices, exclude_zero: bool = False) -> Stats:
    """Mean, max and population std; ``exclude_zero`` drops exact zeros first."""
    vals = np.asarray(list(dices), dtype=np.float64)
    if exclude_zero:
        vals = vals[vals != 0.0]
    if vals.size == 0:
        raise EmptyAfterExclusion("no Dice values left to summarize")
    return Stats(float(vals.mean()), float(vals.max()), float(vals.std()))


def gt_regions(mask) -> list[np.ndarray]:
    """4-connected ground-truth components as boolean masks."""
    labels, n = ndimage.label(_bits(mask), structure=FOUR)
    return [labels == k for k in range(1, n + 1)]


@dataclass
class ClassDetection:
    n_present: int = 0
    n_detected: int = 0

    @property
    def percent(self) -> float:
        return 100.0 * self.n_detected / self.n_present if self.n_present else 0.0


def _stage_masks(candidates, stage: Stage, threshold: float):
    out = []
    for c in candidates:
        if stage is Stage.PostForest and (c.cyst_prob is None or c.cyst_prob < threshold):
            continue
        out.append(c)
    return out


def size_stratified_detection(candidates_per_slice, gt_per_slice, stage: Stage,
                              threshold: float = 0.5, min_overlap: float = 0.5) -> dict:
    """Per size class: how many GT regions exist and how many are detected.

    A GT region is detected when a candidate surviving ``stage`` covers at
    least ``min_overlap`` of the region's area.
    """
    stage = Stage(stage)
    out = {c: ClassDetection() for c in SizeClass}
    for cands, gt in zip(candidates_per_slice, gt_per_slice):
        cands = _stage_masks(cands, stage, threshold)
        for region in gt_regions(gt):
            area = int(region.sum())
            cls = out[size_class(area)]
            cls.n_present += 1
            for c in cands:
                if np.count_nonzero(region[c.rows, c.cols]) >= min_overlap * area:
                    cls.n_detected += 1
                    break
    return out


def merge_detection(parts) -> dict:
    out = {c: ClassDetection() for c in SizeClass}
    for p in parts:
        for c, d in p.items():
            out[c].n_present += d.n_present
            out[c].n_detected += d.n_detected
    return out


# ---------------------------------------------------------------------------
# reports

@dataclass
class VolumeResult:
    volume_id: str
    scanner: str
    per_slice_dice: list
    gt_positive: list  # per slice: ground truth non-empty
    detection: dict = field(default_factory=dict)  # Stage -> {SizeClass: ClassDetection}
    warnings: list = field(default_factory=list)
    masks: list = field(default_factory=list, repr=False)  # predictions, not reported

    @property
    def stats_all(self) -> Stats:
        return volume_stats(self.per_slice_dice)

    @property
    def stats_nonzero(self) -> Stats | None:
        try:
            return volume_stats(self.per_slice_dice, exclude_zero=True)
        except EmptyAfterExclusion:
            return None

    @property
    def n_zero(self) -> int:
        return sum(1 for d in self.per_slice_dice if d == 0.0)

    @property
    def n_true_negative(self) -> int:
        # both masks empty; Dice is defined as 1.0 there
        return sum(1 for d, pos in zip(self.per_slice_dice, self.gt_positive)
                   if not pos and d == 1.0)


@dataclass
class EvalReport:
    volumes: list
    mode: str = "loocv"
    seed: int = 0

    def ordered(self):
        return sorted(self.volumes, key=lambda v: v.volume_id)

    def per_scanner(self, exclude_zero: bool = False) -> dict:
        """Unweighted average of per-volume statistics for each scanner."""
        groups = {}
        for v in self.ordered():
            st = v.stats_nonzero if exclude_zero else v.stats_all
            if st is not None:
                groups.setdefault(v.scanner, []).append(st)
        return {sc: Stats(float(np.mean([s.mean for s in sts])),
                          float(np.max([s.max for s in sts])),
                          float(np.mean([s.std for s in sts])))
                for sc, sts in sorted(groups.items())}

    def detection(self, stage: Stage) -> dict:
        return merge_detection(v.detection.get(stage, {}) for v in self.volumes)

    def positive_slice_dice(self) -> list:
        return [d for v in self.ordered() for d, pos in zip(v.per_slice_dice, v.gt_positive) if pos]

    @property
    def mean_positive_dice(self) -> float:
        vals = self.positive_slice_dice()
        return float(np.mean(vals)) if vals else float("nan")


def _fmt(x) -> str:
    if x is None:
        return "absent"
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else str(x)
    return str(x)


def report_key_values(r: EvalReport) -> str:
    lines = [
        "# cyst segmentation evaluation report",
        "# GT regions are per-slice 4-connected components of the union-of-graders mask",
        "# a region is detected when one candidate covers >= 50% of its area",
        f"mode = {r.mode}",
        f"seed = {r.seed}",
        f"n_volumes = {len(r.volumes)}",
        f"positive_slices.mean_dice = {_fmt(r.mean_positive_dice)}",
    ]
    for v in r.ordered():
        p = f"volume.{v.volume_id}"
        lines.append(f"{p}.scanner = {v.scanner}")
        lines.append(f"{p}.n_slices = {len(v.per_slice_dice)}")
        lines.append(f"{p}.dice = {','.join(_fmt(float(d)) for d in v.per_slice_dice)}")
        lines.append(f"{p}.n_zero_dice = {v.n_zero}")
        lines.append(f"{p}.n_true_negative = {v.n_true_negative}")
        for tag, st in (("all", v.stats_all), ("nonzero", v.stats_nonzero)):
            for k in ("mean", "max", "std"):
                lines.append(f"{p}.{tag}.{k} = {_fmt(None if st is None else getattr(st, k))}")
        for w in v.warnings:
            lines.append(f"{p}.warning = {w}")
    for tag, excl in (("all", False), ("nonzero", True)):
        for sc, st in r.per_scanner(excl).items():
            for k in ("mean", "max", "std"):
                lines.append(f"scanner.{sc}.{tag}.{k} = {_fmt(getattr(st, k))}")
    for stage in Stage:
        for cls, d in r.detection(stage).items():
            p = f"detection.{stage.value}.{cls.value}"
            lines.append(f"{p}.n_present = {d.n_present}")
            lines.append(f"{p}.n_detected = {d.n_detected}")
            lines.append(f"{p}.percent = {_fmt(float(d.percent))}")
    return "\n".join(lines) + "\n"


def report_text(r: EvalReport, exclude_zero: bool = True) -> str:
    out = [f"Evaluation ({r.mode}, seed {r.seed})", ""]
    blocks = [("all slices", False)]
    if exclude_zero:
        blocks.append(("excluding zero-Dice slices", True))
    for title, excl in blocks:
        out.append(f"Dice per volume, {title}")
        out.append(f"{'volume':<16}{'scanner':<12}{'mean':>8}{'max':>8}{'std':>8}")
        for v in r.ordered():
            st = v.stats_nonzero if excl else v.stats_all
            if st is None:
                out.append(f"{v.volume_id:<16}{v.scanner:<12}{'--':>8}{'--':>8}{'--':>8}")
            else:
                out.append(f"{v.volume_id:<16}{v.scanner:<12}{st.mean:8.4f}{st.max:8.4f}{st.std:8.4f}")
        for sc, st in r.per_scanner(excl).items():
            out.append(f"{'[scanner]':<16}{sc:<12}{st.mean:8.4f}{st.max:8.4f}{st.std:8.4f}")
        out.append("")
    out.append("Detection by cyst size (per-slice 2-D components)")
    out.append(f"{'size':<8}{'present':>9}{'post-MSER %':>13}{'post-forest %':>15}")
    mser, forest = r.detection(Stage.PostMser), r.detection(Stage.PostForest)
    for cls in SizeClass:
        out.append(f"{cls.value:<8}{mser[cls].n_present:>9}{mser[cls].percent:>13.2f}"
                   f"{forest[cls].percent:>15.2f}")
    out.append("")
    out.append(f"Mean Dice over slices with cysts: {r.mean_positive_dice:.4f}")
    return "\n".join(out) + "\n"
