"""OCT volume and mask data model, PGM/manifest I/O and size normalization.

Slices are numpy arrays indexed ``[row, column]`` (depth first, lateral
second).  The normalized grid is 512 columns x 256 rows.  A slice is either
``uint8`` (raw 8-bit) or ``float64`` in [0, 1]; the dtype records which.
"""
from __future__ import annotations

import enum
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateSlice,
    DegenerateTarget,
    DimensionMismatch,
    MalformedManifest,
    MissingFile,
    UnsupportedImageFormat,
)

log = logging.getLogger(__name__)

TARGET_WIDTH = 512
TARGET_HEIGHT = 256


class Scanner(enum.Enum):
    Spectralis = "Spectralis"
    Cirrus = "Cirrus"
    Topcon = "Topcon"
    Nidek = "Nidek"
    Synthetic = "Synthetic"


class MaskSource(enum.Enum):
    Grader1 = "Grader1"
    Grader2 = "Grader2"
    Union = "Union"
    Prediction = "Prediction"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def check_slice(data: np.ndarray) -> np.ndarray:
    data = np.asarray(data)
    if data.ndim != 2:
        raise DimensionMismatch(f"slice must be 2-D, got shape {data.shape}")
    if data.dtype == np.uint8:
        return data
    if not np.issubdtype(data.dtype, np.floating):
        raise UnsupportedImageFormat(f"unsupported slice dtype {data.dtype}")
    data = data.astype(np.float64, copy=False)
    if data.size and (np.nanmin(data) < 0.0 or np.nanmax(data) > 1.0):
        raise ValueError("float slice intensities must lie in [0, 1]")
    return data


@dataclass(frozen=True)
class BinaryMask:
    bits: np.ndarray
    source: MaskSource = MaskSource.Prediction

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise DimensionMismatch(f"mask must be 2-D, got shape {bits.shape}")
        object.__setattr__(self, "bits", _frozen(bits.astype(bool)))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    @classmethod
    def empty(cls, height: int, width: int, source=MaskSource.Prediction):
        return cls(np.zeros((height, width), bool), source)


@dataclass(frozen=True)
class OctVolume:
    slices: tuple
    scanner: Scanner = Scanner.Synthetic
    volume_id: str = "volume"
    grader1: tuple | None = None
    grader2: tuple | None = None
    notes: tuple = field(default=())

    def __post_init__(self):
        slices = tuple(_frozen(check_slice(s)) for s in self.slices)
        if not slices:
            raise ValueError("a volume needs at least one slice")
        object.__setattr__(self, "slices", slices)
        object.__setattr__(self, "scanner", Scanner(self.scanner))
        for name in ("grader1", "grader2"):
            masks = getattr(self, name)
            if masks is None:
                continue
            masks = tuple(masks)
            if len(masks) != len(slices):
                raise DimensionMismatch(
                    f"{name} has {len(masks)} masks for {len(slices)} slices")
            for s, m in zip(slices, masks):
                if m.shape != s.shape:
                    raise DimensionMismatch(
                        f"{name} mask shape {m.shape} != slice shape {s.shape}")
            object.__setattr__(self, name, masks)

    def __len__(self):
        return len(self.slices)

    @property
    def is_float(self) -> bool:
        return self.slices[0].dtype != np.uint8

    @property
    def has_truth(self) -> bool:
        return self.grader1 is not None or self.grader2 is not None

    def truth(self) -> list[BinaryMask] | None:
        """Union-of-graders ground truth per slice (None without any grader)."""
        if not self.has_truth:
            return None
        g1 = self.grader1 or [BinaryMask.empty(*s.shape, MaskSource.Grader1) for s in self.slices]
        g2 = self.grader2 or [BinaryMask.empty(*s.shape, MaskSource.Grader2) for s in self.slices]
        return [union_graders(a, b) for a, b in zip(g1, g2)]

    def as_float(self) -> list[np.ndarray]:
        return [to_float(s) for s in self.slices]


def to_float(s: np.ndarray) -> np.ndarray:
    if s.dtype == np.uint8:
        return s.astype(np.float64) / 255.0
    return np.asarray(s, dtype=np.float64)


def to_uint8(s: np.ndarray) -> np.ndarray:
    if s.dtype == np.uint8:
        return s
    return np.rint(np.clip(s, 0.0, 1.0) * 255.0).astype(np.uint8)


# ---------------------------------------------------------------------------
# PGM (binary P5)

def _pgm_tokens(buf: bytes, count: int):
    tokens, pos = [], 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise UnsupportedImageFormat("truncated PGM header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates header and raster
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    buf = path.read_bytes()
    if buf[:2] != b"P5":
        raise UnsupportedImageFormat(f"{path}: not a binary PGM (P5) file")
    try:
        (magic, w, h, maxval), offset = _pgm_tokens(buf, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise UnsupportedImageFormat(f"{path}: bad PGM header") from exc
    if not 0 < maxval < 256:
        raise UnsupportedImageFormat(f"{path}: maxval {maxval} is not 8-bit")
    raster = buf[offset:offset + w * h]
    if len(raster) != w * h:
        raise UnsupportedImageFormat(f"{path}: raster truncated")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.dtype == bool:
        img = img.astype(np.uint8) * 255
    img = to_uint8(img)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_mask(path, source: MaskSource) -> BinaryMask:
    return BinaryMask(read_pgm(path) != 0, source)


def write_mask(path, mask: BinaryMask) -> None:
    write_pgm(path, mask.bits)


# ---------------------------------------------------------------------------
# manifests

@dataclass(frozen=True)
class VolumeManifest:
    volume_id: str
    scanner: Scanner
    slice_files: tuple
    gt_files_g1: tuple | None = None
    gt_files_g2: tuple | None = None

    def __post_init__(self):
        if not self.slice_files:
            raise MalformedManifest("manifest lists no slices")
        for name in ("gt_files_g1", "gt_files_g2"):
            files = getattr(self, name)
            if files is not None and len(files) != len(self.slice_files):
                raise DimensionMismatch(
                    f"{name} lists {len(files)} files for {len(self.slice_files)} slices")


MANIFEST_KEYS = ("volume_id", "scanner", "slices", "gt_grader1", "gt_grader2")


def parse_key_values(text: str, source: str = "<text>") -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments skipped."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise MalformedManifest(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise MalformedManifest(f"{source}:{lineno}: empty key")
        out[key] = value.strip()
    return out


def _split_list(value: str) -> tuple:
    return tuple(p.strip() for p in value.split(",") if p.strip())


def read_manifest(path) -> VolumeManifest:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedManifest(f"{path}: not UTF-8") from exc
    kv = parse_key_values(text, str(path))
    for key in kv:
        if key not in MANIFEST_KEYS:
            log.warning("%s: ignoring unknown manifest key %r", path, key)
    for key in ("volume_id", "scanner", "slices"):
        if key not in kv:
            raise MalformedManifest(f"{path}: missing key {key!r}")
    try:
        scanner = Scanner(kv["scanner"])
    except ValueError as exc:
        raise MalformedManifest(f"{path}: unknown scanner {kv['scanner']!r}") from exc
    base = path.parent
    resolve = lambda items: tuple(str(base / p) for p in items)  # noqa: E731
    g1 = resolve(_split_list(kv["gt_grader1"])) if "gt_grader1" in kv else None
    g2 = resolve(_split_list(kv["gt_grader2"])) if "gt_grader2" in kv else None
    return VolumeManifest(kv["volume_id"], scanner, resolve(_split_list(kv["slices"])), g1, g2)


def write_manifest(path, manifest: VolumeManifest) -> None:
    """Write a manifest; file paths are stored relative to its directory."""
    path = Path(path)
    base = path.parent.resolve()
    rel = lambda files: ", ".join(  # noqa: E731
        os.path.relpath(Path(f).resolve(), base).replace(os.sep, "/") for f in files)
    lines = [
        f"volume_id = {manifest.volume_id}",
        f"scanner = {manifest.scanner.value}",
        f"slices = {rel(manifest.slice_files)}",
    ]
    if manifest.gt_files_g1 is not None:
        lines.append(f"gt_grader1 = {rel(manifest.gt_files_g1)}")
    if manifest.gt_files_g2 is not None:
        lines.append(f"gt_grader2 = {rel(manifest.gt_files_g2)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_volume(manifest_path) -> OctVolume:
    """Load slices (and grader masks, if listed) in manifest order, unresized."""
    m = read_manifest(manifest_path)
    slices = [read_pgm(f) for f in m.slice_files]
    notes = []
    g1 = g2 = None
    if m.gt_files_g1 is not None:
        g1 = [read_mask(f, MaskSource.Grader1) for f in m.gt_files_g1]
    if m.gt_files_g2 is not None:
        g2 = [read_mask(f, MaskSource.Grader2) for f in m.gt_files_g2]
    if (g1 is None) != (g2 is None):
        msg = f"{m.volume_id}: only one grader present; union taken with an empty mask"
        log.warning(msg)
        notes.append(msg)
    return OctVolume(tuple(slices), m.scanner, m.volume_id,
                     None if g1 is None else tuple(g1),
                     None if g2 is None else tuple(g2), tuple(notes))


def save_volume(volume: OctVolume, directory, name: str | None = None) -> Path:
    """Write slices and grader masks as PGM plus a manifest; returns the manifest path."""
    directory = Path(directory)
    name = name or volume.volume_id
    sdir = directory / name
    sdir.mkdir(parents=True, exist_ok=True)
    slice_files = []
    for i, s in enumerate(volume.slices):
        f = sdir / f"slice_{i:03d}.pgm"
        write_pgm(f, s)
        slice_files.append(str(f))
    gts = {}
    for key, masks in (("g1", volume.grader1), ("g2", volume.grader2)):
        if masks is None:
            gts[key] = None
            continue
        files = []
        for i, mk in enumerate(masks):
            f = sdir / f"gt_{key}_{i:03d}.pgm"
            write_mask(f, mk)
            files.append(str(f))
        gts[key] = tuple(files)
    manifest = VolumeManifest(volume.volume_id, volume.scanner, tuple(slice_files),
                              gts["g1"], gts["g2"])
    mpath = directory / f"{name}.manifest"
    write_manifest(mpath, manifest)
    return mpath


# ---------------------------------------------------------------------------
# resampling

def _linear_axis(n_in: int, n_out: int):
    # half-pixel centre alignment, edge clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(img: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear resampling of a float image to ``height x width``."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if (h, w) == (height, width):
        return img.copy()
    lo, hi, t = _linear_axis(w, width)
    a, b = img[:, lo], img[:, hi]
    tmp = a + (b - a) * t[None, :]
    lo, hi, t = _linear_axis(h, height)
    a, b = tmp[lo, :], tmp[hi, :]
    return a + (b - a) * t[:, None]


def resize_slice(s: np.ndarray, width: int, height: int) -> np.ndarray:
    s = check_slice(s)
    h, w = s.shape
    if w < 2 or h < 2:
        raise DegenerateSlice(f"slice {w}x{h} is too small to resample")
    if (h, w) == (height, width):
        return s.copy()
    out = resize_bilinear(s, width, height)
    if s.dtype == np.uint8:
        return np.rint(out).astype(np.uint8)
    return np.clip(out, 0.0, 1.0)


def resize_mask(m: BinaryMask, width: int, height: int) -> BinaryMask:
    """Nearest-neighbour resampling; binarity is preserved."""
    if width <= 0 or height <= 0:
        raise DegenerateTarget(f"target {width}x{height}")
    h, w = m.shape
    rows = np.minimum(((np.arange(height) + 0.5) * h / height).astype(np.intp), h - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * w / width).astype(np.intp), w - 1)
    return BinaryMask(m.bits[np.ix_(rows, cols)], m.source)


def normalize_size(v: OctVolume, width: int = TARGET_WIDTH,
                   height: int = TARGET_HEIGHT) -> OctVolume:
    """Resample every slice (bilinear) and grader mask (nearest) to the working grid."""
    slices = tuple(resize_slice(s, width, height) for s in v.slices)
    g1 = None if v.grader1 is None else tuple(resize_mask(m, width, height) for m in v.grader1)
    g2 = None if v.grader2 is None else tuple(resize_mask(m, width, height) for m in v.grader2)
    return OctVolume(slices, v.scanner, v.volume_id, g1, g2, v.notes)


def union_graders(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    return BinaryMask(a.bits | b.bits, MaskSource.Union)
