import dataclasses
import logging

import numpy as np
import pytest

from cystseg.errors import InsufficientVolumes, MalformedManifest
from cystseg.evaluation import Stage, report_key_values
from cystseg.mser import CandidateRegion
from cystseg.phantom import PhantomSpec, generate_phantom
from cystseg.pipeline import (
    PipelineConfig,
    analyse_slice,
    candidate_labels,
    loocv,
)
from cystseg.volume import BinaryMask, MaskSource


def test_config_round_trip():
    cfg = PipelineConfig(tv_lambda=3.5, mser_delta=4, tv_log=True, saliency_scales="1:2")
    assert PipelineConfig.from_text(cfg.dump()) == cfg


def test_config_errors(caplog):
    with caplog.at_level(logging.WARNING):
        PipelineConfig.from_text("mystery = 1\n")
    assert "mystery" in caplog.text
    with pytest.raises(MalformedManifest):
        PipelineConfig.from_text("tv_lambda = soft\n")
    with pytest.raises(ValueError):
        PipelineConfig.from_text("mser_min_area = 2\n")


def _cand(box, shape=(40, 40)):
    m = np.zeros(shape, bool)
    y0, x0, y1, x1 = box
    m[y0:y1, x0:x1] = True
    return CandidateRegion(*np.nonzero(m), shape, 0.0)


def test_candidate_labels():
    gt = np.zeros((40, 40), bool)
    gt[10:20, 10:20] = True
    cands = [_cand((10, 10, 20, 20)), _cand((10, 15, 20, 25)), _cand((30, 30, 35, 35)),
             _cand((21, 10, 23, 20))]
    labels = candidate_labels(cands, BinaryMask(gt, MaskSource.Union), dilation=2)
    # inside, half inside, far away, touching the 2-px margin
    assert labels.tolist() == [1, 1, 0, -1]


def test_constant_slice_falls_back_to_full_roi():
    a = analyse_slice(np.full((256, 512), 128, np.uint8), PipelineConfig())
    assert a.boundaries is None and a.warning and a.roi.count() == 256 * 512
    assert a.candidates == []


def _volumes(n, n_slices=2, sigma=0.2):
    out = []
    for i in range(n):
        spec = PhantomSpec(n_slices=n_slices, speckle_sigma=sigma, seed=50 + i,
                           cysts_per_slice=(2, 3), volume_id=f"v{i}")
        out.append(generate_phantom(spec)[0])
    return out


def test_loocv_needs_two_volumes():
    with pytest.raises(InsufficientVolumes):
        loocv(_volumes(1, 1), PipelineConfig())


def test_loocv_symmetric_on_identical_volumes():
    v = _volumes(1)[0]
    twin = dataclasses.replace(v, volume_id="twin")
    r = loocv([v, twin], PipelineConfig())
    a, b = r.volumes
    assert a.per_slice_dice == b.per_slice_dice
    assert a.stats_all == b.stats_all


@pytest.fixture(scope="module")
def five_volume_report():
    vols = _volumes(5, 1)
    return vols, loocv(vols, PipelineConfig())


def test_loocv_structure(five_volume_report):
    _, r = five_volume_report
    assert [v.volume_id for v in r.ordered()] == [f"v{i}" for i in range(5)]
    kv = report_key_values(r)
    for stage in Stage:
        for cls in ("Small", "Medium", "Large"):
            assert f"detection.{stage.value}.{cls}.percent" in kv
    assert kv.count(".all.mean") == 5 + 1  # five volumes and one scanner rollup


def test_loocv_rerun_identical(five_volume_report):
    vols, r = five_volume_report
    assert report_key_values(loocv(vols, PipelineConfig())) == report_key_values(r)
