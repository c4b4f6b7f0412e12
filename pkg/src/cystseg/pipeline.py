"""End-to-end pipeline: preprocessing, candidate selection, false-positive
rejection, training-set construction and leave-one-out evaluation."""
from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .denoise import TvParams, tv_denoise
from .errors import InsufficientVolumes, LayersCrossed, MalformedManifest
from .evaluation import EvalReport, Stage, VolumeResult, dice, size_stratified_detection
from .features import FEATURE_LENGTH, extract_features
from .forest import ForestModel, TrainingSet, train_forest
from .layers import full_roi, roi_mask, segment_layers
from .mser import MserParams, detect_mser
from .saliency import center_surround_dark, parse_scales
from .volume import (
    BinaryMask,
    MaskSource,
    OctVolume,
    normalize_size,
    parse_key_values,
    to_float,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    tv_lambda: float = 8.0
    tv_tol: float = 1e-4
    tv_max_iter: int = 200
    tv_log: bool = False
    saliency_scales: str = "1,2:2,3"
    rpe_offset: int = 10
    max_jump: int = 15
    mser_delta: int = 5
    mser_min_area: int = 30
    mser_max_area: int = 15000
    mser_max_variation: float = 0.5
    mser_min_diversity: float = 0.3
    roi_fraction: float = 0.5
    forest_max_depth: int = 16
    forest_min_samples: int = 3
    label_dilation: int = 2
    match_overlap: float = 0.5
    threshold: float = 0.5
    seed: int = 0

    def tv(self) -> TvParams:
        return TvParams(self.tv_lambda, self.tv_max_iter, self.tv_tol, self.tv_log)

    def mser(self) -> MserParams:
        return MserParams(self.mser_delta, self.mser_min_area, self.mser_max_area,
                          self.mser_max_variation, self.mser_min_diversity)

    def scales(self):
        return parse_scales(self.saliency_scales)

    def validate(self) -> "PipelineConfig":
        self.tv()
        self.mser()
        self.scales()
        return self

    @classmethod
    def from_mapping(cls, values: dict, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        base = base or cls()
        known = {f.name: f for f in dataclasses.fields(cls)}
        updates = {}
        for key, raw in values.items():
            if key not in known:
                log.warning("ignoring unknown config key %r", key)
                continue
            kind = type(getattr(base, key))
            if kind is bool and isinstance(raw, str):
                low = raw.strip().lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise MalformedManifest(f"config {key}: not a boolean: {raw!r}")
                updates[key] = low in ("true", "1", "yes")
            else:
                try:
                    updates[key] = kind(raw)
                except ValueError as exc:
                    raise MalformedManifest(f"config {key}: bad value {raw!r}") from exc
        return dataclasses.replace(base, **updates).validate()

    @classmethod
    def from_text(cls, text: str, base=None) -> "PipelineConfig":
        return cls.from_mapping(parse_key_values(text, "<config>"), base)

    def dump(self) -> str:
        lines = ["# effective pipeline configuration"]
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"


@dataclass
class SliceAnalysis:
    denoised: np.ndarray
    saliency: np.ndarray
    roi: BinaryMask
    boundaries: object  # LayerBoundaries or None when layers crossed
    candidates: list
    features: np.ndarray
    warning: str | None = None


def analyse_slice(raw: np.ndarray, cfg: PipelineConfig) -> SliceAnalysis:
    """Preprocessing and candidate selection for one size-normalized slice."""
    u = tv_denoise(to_float(raw), cfg.tv())
    centers, deltas = cfg.scales()
    sal = center_surround_dark(u, centers, deltas)
    h, w = u.shape
    warning = None
    try:
        bounds = segment_layers(u, cfg.rpe_offset, cfg.max_jump)
        roi = roi_mask(bounds, w, h)
    except LayersCrossed as exc:
        bounds, roi = None, full_roi(w, h)
        warning = f"layers crossed ({exc}); full-slice ROI used"
    cands = [c for c in detect_mser(u, roi, cfg.mser(), sal, cfg.roi_fraction) if c.area >= 4]
    feats = np.array([extract_features(u, sal, c, bounds) for c in cands])
    return SliceAnalysis(u, sal, roi, bounds, cands, feats.reshape(-1, FEATURE_LENGTH), warning)


def _analyse_job(args):
    return analyse_slice(*args)


def analyse_volume(v: OctVolume, cfg: PipelineConfig, jobs: int = 1) -> list[SliceAnalysis]:
    """Analyse every slice; ``jobs`` bounds process-level parallelism.  Results
    come back in slice order whatever the scheduling."""
    work = [(s, cfg) for s in v.slices]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            out = list(ex.map(_analyse_job, work))
    else:
        out = [analyse_slice(s, cfg) for s in v.slices]
    for i, a in enumerate(out):
        if a.warning:
            log.warning("%s slice %d: %s", v.volume_id, i, a.warning)
    return out


def prepare(v: OctVolume) -> OctVolume:
    return normalize_size(v)


def candidate_labels(candidates, gt: BinaryMask, dilation: int = 2) -> np.ndarray:
    """1 = cyst (>= half the candidate inside GT), 0 = clear of GT dilated by
    ``dilation`` px, -1 = ambiguous (left out of training)."""
    near = ndimage.binary_dilation(gt.bits, iterations=dilation) if dilation > 0 else gt.bits
    out = np.full(len(candidates), -1, dtype=np.int64)
    for i, c in enumerate(candidates):
        inside = np.count_nonzero(gt.bits[c.rows, c.cols])
        if inside >= 0.5 * c.area:
            out[i] = 1
        elif not near[c.rows, c.cols].any():
            out[i] = 0
    return out


def training_rows(analyses, truth, cfg: PipelineConfig):
    X, y = [], []
    for a, gt in zip(analyses, truth):
        lab = candidate_labels(a.candidates, gt, cfg.label_dilation)
        keep = lab >= 0
        X.append(a.features[keep])
        y.append(lab[keep])
    if not X:
        return np.zeros((0, FEATURE_LENGTH)), np.zeros(0, dtype=np.int64)
    return np.vstack(X), np.concatenate(y)


def build_training_set(items, cfg: PipelineConfig) -> TrainingSet:
    """``items``: iterable of ``(volume_id, analyses, truth_masks)``."""
    Xs, ys, ids = [], [], []
    for vid, analyses, truth in items:
        X, y = training_rows(analyses, truth, cfg)
        Xs.append(X)
        ys.append(y)
        ids.append(vid)
    return TrainingSet(np.vstack(Xs), np.concatenate(ys), tuple(ids))


def fit(ts: TrainingSet, cfg: PipelineConfig, jobs: int = 1) -> ForestModel:
    return train_forest(ts, cfg.seed, cfg.forest_max_depth, cfg.forest_min_samples, jobs)


def classify(a: SliceAnalysis, model: ForestModel) -> list:
    """Candidates of one slice with ``cyst_prob`` filled in."""
    if not a.candidates:
        return []
    probs = model.predict_proba(a.features)
    return [dataclasses.replace(c, cyst_prob=float(p)) for c, p in zip(a.candidates, probs)]


def prediction_mask(candidates, shape, threshold: float) -> BinaryMask:
    bits = np.zeros(shape, bool)
    for c in candidates:
        if c.cyst_prob is not None and c.cyst_prob >= threshold:
            bits[c.rows, c.cols] = True
    return BinaryMask(bits, MaskSource.Prediction)


@dataclass
class Segmentation:
    masks: list
    candidates: list  # per slice, with probabilities
    analyses: list = field(repr=False, default_factory=list)


def segment_analysed(analyses, model: ForestModel, cfg: PipelineConfig) -> Segmentation:
    cands = [classify(a, model) for a in analyses]
    masks = [prediction_mask(c, a.denoised.shape, cfg.threshold) for c, a in zip(cands, analyses)]
    return Segmentation(masks, cands, analyses)


def segment_volume(v: OctVolume, model: ForestModel, cfg: PipelineConfig,
                   jobs: int = 1) -> Segmentation:
    return segment_analysed(analyse_volume(prepare(v), cfg, jobs), model, cfg)


def score_volume(v: OctVolume, seg: Segmentation, truth, cfg: PipelineConfig) -> VolumeResult:
    dices = [dice(m, gt) for m, gt in zip(seg.masks, truth)]
    positive = [bool(gt.bits.any()) for gt in truth]
    detection = {
        stage: size_stratified_detection(seg.candidates, truth, stage, cfg.threshold,
                                         cfg.match_overlap)
        for stage in Stage
    }
    warns = [f"slice {i}: {a.warning}" for i, a in enumerate(seg.analyses) if a.warning]
    return VolumeResult(v.volume_id, v.scanner.value, dices, positive, detection,
                        list(v.notes) + warns, list(seg.masks))


def _require_truth(volumes):
    for v in volumes:
        if not v.has_truth:
            raise InsufficientVolumes(f"volume {v.volume_id} has no ground truth")


def loocv(volumes, cfg: PipelineConfig, jobs: int = 1) -> EvalReport:
    """Leave-one-volume-out: each volume is segmented by a forest trained on
    the candidates of all the others."""
    volumes = sorted((prepare(v) for v in volumes), key=lambda v: v.volume_id)
    if len(volumes) < 2:
        raise InsufficientVolumes("leave-one-out needs at least two volumes")
    _require_truth(volumes)
    ids = [v.volume_id for v in volumes]
    if len(set(ids)) != len(ids):
        raise InsufficientVolumes("volume ids must be unique")
    analysed = [analyse_volume(v, cfg, jobs) for v in volumes]
    truths = [v.truth() for v in volumes]
    results = []
    for i, v in enumerate(volumes):
        others = [(volumes[j].volume_id, analysed[j], truths[j])
                  for j in range(len(volumes)) if j != i]
        model = fit(build_training_set(others, cfg), cfg, jobs)
        seg = segment_analysed(analysed[i], model, cfg)
        results.append(score_volume(v, seg, truths[i], cfg))
    return EvalReport(results, "loocv", cfg.seed)


def evaluate_fixed(volumes, model: ForestModel, cfg: PipelineConfig, jobs: int = 1) -> EvalReport:
    volumes = sorted((prepare(v) for v in volumes), key=lambda v: v.volume_id)
    _require_truth(volumes)
    results = []
    for v in volumes:
        seg = segment_analysed(analyse_volume(v, cfg, jobs), model, cfg)
        results.append(score_volume(v, seg, v.truth(), cfg))
    return EvalReport(results, "fixed-model", cfg.seed)


def train_on_volumes(volumes, cfg: PipelineConfig, jobs: int = 1):
    """Returns ``(model, training_set)`` for volumes with ground truth."""
    volumes = [prepare(v) for v in volumes]
    _require_truth(volumes)
    items = [(v.volume_id, analyse_volume(v, cfg, jobs), v.truth()) for v in volumes]
    ts = build_training_set(items, cfg)
    return fit(ts, cfg, jobs), ts
