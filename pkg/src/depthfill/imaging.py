"""RGB-D image types, file round trips, and geometry.

Depth lives in meters as float32, with 0 marking a missing measurement.
On disk a depth map is a 16-bit single-channel PNG storing integer
counts; dividing by ``depth_scale`` (counts per meter, 4000 by default)
recovers meters, and save/load round-trips exactly at count precision.
RGB stays in [0, 1].  Resize rules: bilinear for color, nearest for
depth, because interpolated depth would invent geometry between a
surface and the zero hole value.
"""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from PIL import Image

from depthfill.tensor import Tensor

DEFAULT_DEPTH_SCALE = 4000.0
DEFAULT_MAX_DEPTH = 8.0
MISSING_GT = "-"


@dataclass(frozen=True, eq=False)
class DepthImage:
    """[H, W] float32 meters; zero means the sensor saw nothing."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"depth must be 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("depth contains non-finite values")
        if (arr < 0).any():
            raise ValueError("depth contains negative values")
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid_mask(self) -> np.ndarray:
        return self.values > 0

    @property
    def hole_count(self) -> int:
        return int((self.values == 0).sum())


@dataclass(frozen=True, eq=False)
class RgbImage:
    """[H, W, 3] float32 color in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"rgb must be [H, W, 3], got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("rgb contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("rgb values must lie in [0, 1]")
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class RgbdSample:
    """One aligned capture: color, sensor depth, and optional true depth."""

    identifier: str
    rgb: RgbImage
    raw_depth: DepthImage
    gt_depth: DepthImage | None = None

    def __post_init__(self):
        shapes = {(self.rgb.height, self.rgb.width), (self.raw_depth.height, self.raw_depth.width)}
        if self.gt_depth is not None:
            shapes.add((self.gt_depth.height, self.gt_depth.width))
        if len(shapes) != 1:
            raise ValueError(f"sample {self.identifier!r} mixes image sizes {sorted(shapes)}")


def load_depth(path: str | os.PathLike, depth_scale: float = DEFAULT_DEPTH_SCALE) -> DepthImage:
    """Read a 16-bit single-channel depth file and convert counts to meters."""
    with Image.open(path) as img:
        if img.mode not in ("I;16", "I"):
            raise ValueError(
                f"{path}: expected a 16-bit single-channel depth image, got mode {img.mode!r}"
            )
        counts = np.asarray(img, dtype=np.float64)
    return DepthImage((counts / float(depth_scale)).astype(np.float32))


def save_depth(depth: DepthImage, path: str | os.PathLike,
               depth_scale: float = DEFAULT_DEPTH_SCALE) -> None:
    """Write meters as 16-bit counts; values beyond the 16-bit range clip."""
    counts = np.round(depth.values.astype(np.float64) * float(depth_scale))
    counts = np.clip(counts, 0, np.iinfo(np.uint16).max).astype(np.uint16)
    Image.fromarray(counts).save(path)


def load_rgb(path: str | os.PathLike) -> RgbImage:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return RgbImage(arr / 255.0)


def save_rgb(rgb: RgbImage, path: str | os.PathLike) -> None:
    arr = np.round(rgb.values * 255.0).astype(np.uint8)
    Image.fromarray(arr).save(path)


@dataclass(frozen=True)
class ManifestEntry:
    """Paths are stored relative to the manifest file."""

    rgb_path: str
    raw_depth_path: str
    gt_depth_path: str | None

    @property
    def identifier(self) -> str:
        return self.rgb_path


class DatasetManifest:
    """Tab-separated index of samples: rgb, raw depth, gt depth per line.

    A ``-`` in the third column marks a sample without ground truth.
    Identifiers (the rgb paths) must be unique, and every referenced
    file must exist next to the manifest when it is read.
    """

    def __init__(self, entries: Sequence[ManifestEntry], root: str):
        counts = Counter(e.identifier for e in entries)
        dupes = sorted(i for i, n in counts.items() if n > 1)
        if dupes:
            raise ValueError(f"duplicate sample identifiers in manifest: {dupes}")
        self.entries = list(entries)
        self.root = root

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def resolve(self, relative: str) -> str:
        return os.path.join(self.root, relative)


def read_manifest(path: str | os.PathLike) -> DatasetManifest:
    path = os.fspath(path)
    root = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated columns, got {len(cols)}")
            rgb, raw, gt = cols
            entries.append(ManifestEntry(rgb, raw, None if gt == MISSING_GT else gt))
    manifest = DatasetManifest(entries, root)
    for entry in manifest:
        for rel in (entry.rgb_path, entry.raw_depth_path, entry.gt_depth_path):
            if rel is not None and not os.path.exists(manifest.resolve(rel)):
                raise FileNotFoundError(f"manifest references missing file: {manifest.resolve(rel)}")
    return manifest


def write_manifest(entries: Sequence[ManifestEntry], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            gt = MISSING_GT if entry.gt_depth_path is None else entry.gt_depth_path
            fh.write(f"{entry.rgb_path}\t{entry.raw_depth_path}\t{gt}\n")


def load_sample(manifest: DatasetManifest, entry: ManifestEntry,
                depth_scale: float = DEFAULT_DEPTH_SCALE) -> RgbdSample:
    gt = None
    if entry.gt_depth_path is not None:
        gt = load_depth(manifest.resolve(entry.gt_depth_path), depth_scale)
    return RgbdSample(
        identifier=entry.identifier,
        rgb=load_rgb(manifest.resolve(entry.rgb_path)),
        raw_depth=load_depth(manifest.resolve(entry.raw_depth_path), depth_scale),
        gt_depth=gt,
    )


def _source_coords(out_size: int, in_size: int) -> np.ndarray:
    # pixel-center convention shared by both interpolators
    return (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5


def _resize_nearest(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    rows = np.clip(np.floor(_source_coords(height, arr.shape[0]) + 0.5), 0, arr.shape[0] - 1)
    cols = np.clip(np.floor(_source_coords(width, arr.shape[1]) + 0.5), 0, arr.shape[1] - 1)
    return arr[rows.astype(np.int64)][:, cols.astype(np.int64)]


def _resize_bilinear(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    src_r = np.clip(_source_coords(height, arr.shape[0]), 0, arr.shape[0] - 1)
    src_c = np.clip(_source_coords(width, arr.shape[1]), 0, arr.shape[1] - 1)
    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    r1 = np.minimum(r0 + 1, arr.shape[0] - 1)
    c1 = np.minimum(c0 + 1, arr.shape[1] - 1)
    fr = (src_r - r0).reshape(-1, 1)
    fc = (src_c - c0).reshape(1, -1)
    if arr.ndim == 3:
        fr = fr[..., None]
        fc = fc[..., None]
    top = arr[r0][:, c0] * (1 - fc) + arr[r0][:, c1] * fc
    bottom = arr[r1][:, c0] * (1 - fc) + arr[r1][:, c1] * fc
    return top * (1 - fr) + bottom * fr


def resize_depth(depth: DepthImage, height: int, width: int) -> DepthImage:
    """Nearest-neighbor resize; output values are a subset of the input's."""
    return DepthImage(_resize_nearest(depth.values, height, width))


def resize_rgb(rgb: RgbImage, height: int, width: int) -> RgbImage:
    out = _resize_bilinear(rgb.values.astype(np.float64), height, width)
    return RgbImage(np.clip(out, 0.0, 1.0).astype(np.float32))


def resize_sample(sample: RgbdSample, height: int, width: int) -> RgbdSample:
    """Stretch every plane of the sample to height x width (no crop or pad)."""
    return replace(
        sample,
        rgb=resize_rgb(sample.rgb, height, width),
        raw_depth=resize_depth(sample.raw_depth, height, width),
        gt_depth=None if sample.gt_depth is None else resize_depth(sample.gt_depth, height, width),
    )


def to_model_input(sample: RgbdSample, depth_source: str = "raw",
                   max_depth: float = DEFAULT_MAX_DEPTH, dtype=np.float32) -> Tensor:
    """Pack a sample as a [4, H, W] tensor: RGB then depth / max_depth.

    The depth channel is a pure rescale (no clamp), so multiplying it by
    ``max_depth`` inverts the packing to within float precision.
    """
    if depth_source == "raw":
        depth = sample.raw_depth
    elif depth_source == "gt":
        if sample.gt_depth is None:
            raise ValueError(f"sample {sample.identifier!r} has no ground-truth depth")
        depth = sample.gt_depth
    else:
        raise ValueError(f"depth_source must be 'raw' or 'gt', got {depth_source!r}")
    rgb = sample.rgb.values.transpose(2, 0, 1).astype(dtype)
    norm = (depth.values / max_depth).astype(dtype)[None]
    return Tensor(np.concatenate([rgb, norm], axis=0))


def split_model_input(data: np.ndarray, max_depth: float = DEFAULT_MAX_DEPTH):
    """Inverse of to_model_input: ([H, W, 3] rgb, [H, W] depth in meters)."""
    if data.shape[0] != 4:
        raise ValueError(f"expected 4 channels, got shape {data.shape}")
    return data[:3].transpose(1, 2, 0), data[3] * max_depth
