"""Command-line front end.

Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 data or model error.
Configuration precedence: command-line flags > ``--config`` file > defaults.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import __version__
from .errors import CystSegError, MissingFile, SingleClassTrainingSet
from .evaluation import report_key_values, report_text
from .forest import load_model, save_model
from .phantom import PhantomSpec, generate_phantom
from .pipeline import (
    PipelineConfig,
    analyse_volume,
    evaluate_fixed,
    loocv,
    prepare,
    segment_analysed,
    train_on_volumes,
)
from .volume import MaskSource, load_volume, read_mask, save_volume, write_mask, write_pgm

log = logging.getLogger("cystseg")

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3
CONFIG_NAME = "effective_config.txt"


class UsageError(Exception):
    pass


# flag -> PipelineConfig field
PIPELINE_FLAGS = {
    "--tv-lambda": ("tv_lambda", float),
    "--tv-tol": ("tv_tol", float),
    "--tv-max-iter": ("tv_max_iter", int),
    "--saliency-scales": ("saliency_scales", str),
    "--rpe-offset": ("rpe_offset", int),
    "--max-jump": ("max_jump", int),
    "--mser-delta": ("mser_delta", int),
    "--mser-min-area": ("mser_min_area", int),
    "--mser-max-area": ("mser_max_area", int),
    "--mser-max-variation": ("mser_max_variation", float),
    "--mser-min-diversity": ("mser_min_diversity", float),
    "--roi-fraction": ("roi_fraction", float),
    "--forest-max-depth": ("forest_max_depth", int),
    "--forest-min-samples": ("forest_min_samples", int),
    "--threshold": ("threshold", float),
    "--seed": ("seed", int),
}


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline")
    g.add_argument("--config", help="key = value configuration file")
    g.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    g.add_argument("--tv-log", dest="tv_log", action="store_true", default=None,
                   help="denoise log intensities (extension, off by default)")
    for flag, (name, kind) in PIPELINE_FLAGS.items():
        g.add_argument(flag, dest=name, type=kind, default=None)


def _config(args) -> PipelineConfig:
    values = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise MissingFile(str(path))
        values.update(PipelineConfig.from_text(path.read_text(encoding="utf-8")).__dict__)
    for name, _ in PIPELINE_FLAGS.values():
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if getattr(args, "tv_log", None):
        values["tv_log"] = True
    try:
        return PipelineConfig.from_mapping(values)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _jobs(args) -> int:
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    return args.jobs


def _write_config(directory: Path, cfg: PipelineConfig, extra: dict | None = None) -> None:
    text = cfg.dump()
    for k, v in (extra or {}).items():
        text += f"{k} = {v}\n"
    (directory / CONFIG_NAME).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands

def _pair(text: str, kind=int):
    parts = [kind(p) for p in text.split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}")
    return tuple(parts)


def cmd_phantom_gen(args) -> int:
    if args.volumes < 1 or args.slices < 1:
        raise UsageError("--volumes and --slices must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(args.seed).generate_state(args.volumes, dtype=np.uint32)
    for i, s in enumerate(seeds):
        spec = PhantomSpec(n_slices=args.slices, cysts_per_slice=args.cysts_per_slice,
                           cyst_area_range=args.cyst_area, speckle_sigma=args.speckle_sigma,
                           layer_amplitude=args.layer_amplitude, seed=int(s),
                           volume_id=f"phantom_{i:02d}")
        volume, _ = generate_phantom(spec)
        path = save_volume(volume, out)
        log.info("wrote %s", path)
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    volume = prepare(load_volume(args.manifest))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    analyses = analyse_volume(volume, cfg, _jobs(args))
    for i, a in enumerate(analyses):
        write_pgm(out / f"denoised_{i:03d}.pgm", a.denoised)
        if args.saliency:
            write_pgm(out / f"saliency_{i:03d}.pgm", a.saliency)
        if args.dump_layers:
            write_pgm(out / f"layers_{i:03d}.pgm", _overlay(a.denoised, None, a.boundaries))
    _write_config(out, cfg, {"manifest": args.manifest})
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    volumes = [load_volume(m) for m in args.manifest_list]
    if not all(v.has_truth for v in volumes):
        raise UsageError("ground truth required for training")
    model, ts = train_on_volumes(volumes, cfg, _jobs(args))
    model_path = Path(args.model)
    save_model(model, model_path)
    n_cyst = int(ts.y.sum())
    summary = [
        f"model = {model_path.name}",
        f"volumes = {', '.join(ts.provenance)}",
        f"rows = {len(ts)}",
        f"rows_cyst = {n_cyst}",
        f"rows_noncyst = {len(ts) - n_cyst}",
        f"n_trees = {model.n_trees}",
        f"oob_accuracy = {model.oob_accuracy!r}",
        f"train_seed = {model.train_seed}",
    ]
    summary_path = Path(args.summary) if args.summary else model_path.with_suffix(".summary.txt")
    summary_path.write_text("\n".join(summary) + "\n", encoding="utf-8")
    _write_config(model_path.parent, cfg, {"model": model_path.name})
    print("\n".join(summary))
    return EXIT_OK


def cmd_segment(args) -> int:
    cfg = _config(args)
    model = load_model(args.model)
    volume = prepare(load_volume(args.manifest))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seg = segment_analysed(analyse_volume(volume, cfg, _jobs(args)), model, cfg)
    for i, (m, a) in enumerate(zip(seg.masks, seg.analyses)):
        write_mask(out / f"mask_{i:03d}.pgm", m)
        if args.overlays:
            write_pgm(out / f"overlay_{i:03d}.pgm", _overlay(a.denoised, m.bits, a.boundaries))
    _write_config(out, cfg, {"manifest": args.manifest, "model": args.model})
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    volumes = [load_volume(m) for m in args.manifest_list]
    if not all(v.has_truth for v in volumes):
        raise UsageError("ground truth required")
    if args.model:
        report = evaluate_fixed(volumes, load_model(args.model), cfg, _jobs(args))
    else:
        report = loocv(volumes, cfg, _jobs(args))
    text = report_text(report, exclude_zero=args.exclude_zero)
    if args.report_out:
        path = Path(args.report_out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report_key_values(report), encoding="utf-8")
        path.with_name(path.name + ".txt").write_text(text, encoding="utf-8")
        _write_config(path.parent, cfg, {"model": args.model or "loocv"})
    if args.masks_out:
        for v in report.ordered():
            d = Path(args.masks_out) / v.volume_id
            d.mkdir(parents=True, exist_ok=True)
            for i, m in enumerate(v.masks):
                write_mask(d / f"mask_{i:03d}.pgm", m)
    print(text, end="")
    return EXIT_OK


def _overlay(img, mask, bounds) -> np.ndarray:
    """Grey slice with mask contours at 255 and layer rows at 0."""
    out = np.rint(np.clip(img, 0, 1) * 255).astype(np.uint8)
    if mask is not None and mask.any():
        edge = mask & ~ndimage.binary_erosion(mask)
        out[edge] = 255
    if bounds is not None:
        cols = np.arange(out.shape[1])
        out[bounds.ilm_row, cols] = 0
        out[bounds.rpe_row, cols] = 0
    return out


def cmd_overlay(args) -> int:
    volume = prepare(load_volume(args.manifest))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    masks = Path(args.masks)
    for i, s in enumerate(volume.slices):
        m = read_mask(masks / f"mask_{i:03d}.pgm", MaskSource.Prediction)
        img = s / 255.0 if s.dtype == np.uint8 else s
        write_pgm(out / f"overlay_{i:03d}.pgm", _overlay(img, m.bits, None))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cystseg", description="Retinal cyst segmentation in OCT volumes")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom-gen", help="write synthetic phantom volumes")
    s.add_argument("--out", required=True)
    s.add_argument("--volumes", type=int, default=5)
    s.add_argument("--slices", type=int, default=6)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--speckle-sigma", type=float, default=0.3)
    s.add_argument("--layer-amplitude", type=float, default=8.0)
    s.add_argument("--cysts-per-slice", type=_pair, default=(1, 3))
    s.add_argument("--cyst-area", type=_pair, default=(30, 3000))
    s.set_defaults(func=cmd_phantom_gen)

    s = sub.add_parser("preprocess", help="resize, denoise and compute saliency")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--saliency", action="store_true", help="also dump saliency maps")
    s.add_argument("--dump-layers", action="store_true", help="also dump ILM/RPE overlays")
    _add_pipeline_flags(s)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train the random forest")
    s.add_argument("--manifest-list", nargs="+", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--summary")
    _add_pipeline_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("segment", help="segment one volume with a trained model")
    s.add_argument("--manifest", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--overlays", action="store_true")
    _add_pipeline_flags(s)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("eval", help="leave-one-out or fixed-model evaluation")
    s.add_argument("--manifest-list", nargs="+", required=True)
    s.add_argument("--model", help="evaluate this model instead of running leave-one-out")
    s.add_argument("--exclude-zero", action="store_true")
    s.add_argument("--report-out")
    s.add_argument("--masks-out", help="directory for per-slice prediction masks")
    _add_pipeline_flags(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("overlay", help="draw mask contours over slices")
    s.add_argument("--manifest", required=True)
    s.add_argument("--masks", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_overlay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"cystseg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SingleClassTrainingSet as exc:
        print(f"cystseg: training set has one class only: {exc}. "
              "Candidates must include both cysts and non-cysts.", file=sys.stderr)
        return EXIT_DATA
    except (MissingFile, OSError) as exc:
        print(f"cystseg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CystSegError as exc:
        print(f"cystseg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
