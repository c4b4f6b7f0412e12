import filecmp
import os
from pathlib import Path

import numpy as np
import pytest

from cystseg.cli import main
from cystseg.volume import read_pgm


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["phantom-gen", "--out", str(d / "ph"), "--volumes", "2", "--slices", "1",
                 "--seed", "5", "--speckle-sigma", "0.2", "--cysts-per-slice", "2,3"]) == 0
    manifests = sorted(str(p) for p in (d / "ph").glob("*.manifest"))
    model = d / "model.ocsf"
    assert main(["train", "--manifest-list", *manifests, "--model", str(model)]) == 0
    return d, manifests, model


def test_phantom_gen_outputs(tmp_path):
    assert main(["phantom-gen", "--out", str(tmp_path / "a"), "--volumes", "3", "--slices", "2",
                 "--seed", "7"]) == 0
    assert len(list((tmp_path / "a").glob("*.manifest"))) == 3
    assert len(list((tmp_path / "a").rglob("slice_*.pgm"))) == 6
    assert main(["phantom-gen", "--out", str(tmp_path / "b"), "--volumes", "3", "--slices", "2",
                 "--seed", "7"]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["phantom-gen", "--out", str(blocker / "sub"), "--volumes", "1"]) == 1
    assert "error" in capsys.readouterr().err


def test_train_summary(data):
    _, _, model = data
    summary = model.with_suffix(".summary.txt").read_text()
    assert "rows = " in summary and "oob_accuracy = " in summary
    assert "n_trees = 50" in summary
    assert (model.parent / "effective_config.txt").is_file()


def test_segment_masks_and_determinism(data):
    d, manifests, model = data
    args = ["segment", "--manifest", manifests[0], "--model", str(model)]
    assert main([*args, "--out", str(d / "s1"), "--overlays"]) == 0
    assert main([*args, "--out", str(d / "s2"), "--overlays"]) == 0
    assert sorted(p.name for p in (d / "s1").glob("mask_*.pgm")) == ["mask_000.pgm"]
    assert filecmp.cmp(d / "s1" / "mask_000.pgm", d / "s2" / "mask_000.pgm", shallow=False)
    assert read_pgm(d / "s1" / "mask_000.pgm").shape == (256, 512)


def test_threshold_above_one_gives_empty_masks(data):
    d, manifests, model = data
    assert main(["segment", "--manifest", manifests[1], "--model", str(model),
                 "--out", str(d / "empty"), "--threshold", "1.01"]) == 0
    assert not read_pgm(d / "empty" / "mask_000.pgm").any()
    assert "threshold = 1.01" in (d / "empty" / "effective_config.txt").read_text()


def test_eval_fixed_model(data, capsys):
    d, manifests, model = data
    out = d / "rep" / "report.txt"
    assert main(["eval", "--manifest-list", *manifests, "--model", str(model),
                 "--exclude-zero", "--report-out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "all slices" in text and "excluding zero-Dice slices" in text
    assert "mode = fixed-model" in out.read_text()


def test_eval_without_truth(data, tmp_path, capsys):
    _, manifests, model = data
    slice_path = Path(manifests[0]).parent / "phantom_00" / "slice_000.pgm"
    m = tmp_path / "nogt.manifest"
    m.write_text(f"volume_id = x\nscanner = Synthetic\nslices = {os.path.relpath(slice_path, tmp_path)}\n")
    assert main(["eval", "--manifest-list", str(m), "--model", str(model)]) == 2
    assert "ground truth required" in capsys.readouterr().err


def test_single_class_training(tmp_path, capsys):
    assert main(["phantom-gen", "--out", str(tmp_path), "--volumes", "1", "--slices", "1",
                 "--cysts-per-slice", "0,0"]) == 0
    manifest = str(next(tmp_path.glob("*.manifest")))
    code = main(["train", "--manifest-list", manifest, "--model", str(tmp_path / "m.ocsf")])
    assert code == 3
    assert capsys.readouterr().err


def test_usage_errors(tmp_path):
    assert main([]) == 2
    assert main(["segment", "--manifest", "x"]) == 2
    assert main(["phantom-gen", "--out", str(tmp_path), "--volumes", "0"]) == 2


def test_config_file_precedence(data, tmp_path):
    d, manifests, model = data
    cfg = tmp_path / "c.cfg"
    cfg.write_text("threshold = 0.9\nmser_delta = 4\n")
    out = tmp_path / "seg"
    assert main(["segment", "--manifest", manifests[0], "--model", str(model), "--out", str(out),
                 "--config", str(cfg), "--threshold", "0.7"]) == 0
    eff = (out / "effective_config.txt").read_text()
    assert "threshold = 0.7" in eff and "mser_delta = 4" in eff


def test_missing_model(data, tmp_path):
    _, manifests, _ = data
    assert main(["segment", "--manifest", manifests[0], "--model", str(tmp_path / "none"),
                 "--out", str(tmp_path / "o")]) == 1
