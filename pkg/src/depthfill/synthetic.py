"""Procedural RGB-D corpus generator.

Each scene is a tilted background plane with a few box faces floating in
front of it, all rendered as smooth depth gradients inside [0.5, 4.0]
meters.  The color image is a shaded, tinted view of that same depth, so
color genuinely predicts geometry.  The sensor depth is the true depth
with rectangular dropouts plus speckle, the two dominant RGB-D failure
modes; between 5% and 60% of its pixels are holes, and the ground truth
has none.

Scene i depends only on (seed, i), so a corpus is byte-identical across
re-runs and growing n only appends scenes.
"""

from __future__ import annotations

import os

import numpy as np

from depthfill.imaging import (
    DepthImage,
    ManifestEntry,
    RgbImage,
    save_depth,
    save_rgb,
    write_manifest,
)

DEPTH_MIN = 0.5
DEPTH_MAX = 4.0
MIN_HOLE_FRACTION = 0.05
MAX_HOLE_FRACTION = 0.60


def generate_scene(rng: np.random.Generator, height: int, width: int):
    """One scene: (rgb [H,W,3], gt depth [H,W], raw depth [H,W])."""
    ys = np.linspace(0.0, 1.0, height)[:, None]
    xs = np.linspace(0.0, 1.0, width)[None, :]

    base = rng.uniform(2.0, 2.6)
    slope_y = rng.uniform(-0.6, 0.6)
    slope_x = rng.uniform(-0.6, 0.6)
    gt = base + slope_y * ys + slope_x * xs

    for _ in range(int(rng.integers(2, 5))):
        bh = int(rng.integers(max(2, height // 8), max(3, height // 3 + 1)))
        bw = int(rng.integers(max(2, width // 8), max(3, width // 3 + 1)))
        top = int(rng.integers(0, height - bh + 1))
        left = int(rng.integers(0, width - bw + 1))
        offset = rng.uniform(0.3, 1.0)
        tilt = rng.uniform(-0.15, 0.15)
        face = gt[top:top + bh, left:left + bw] - offset + tilt * xs[:, left:left + bw]
        gt[top:top + bh, left:left + bw] = np.clip(face, DEPTH_MIN + 0.05, DEPTH_MAX)
    gt = np.clip(gt, DEPTH_MIN, DEPTH_MAX)

    shade = (DEPTH_MAX - gt) / (DEPTH_MAX - DEPTH_MIN)
    tint = rng.uniform(0.5, 1.0, 3)
    lighting = 0.85 + 0.15 * xs
    rgb = np.clip(shade[..., None] * tint[None, None, :] * lighting[..., None], 0.0, 1.0)

    raw = gt.copy()
    for _ in range(int(rng.integers(1, 5))):
        hh = int(rng.integers(max(2, height // 8), max(3, height // 3 + 1)))
        hw = int(rng.integers(max(2, width // 8), max(3, width // 3 + 1)))
        top = int(rng.integers(0, height - hh + 1))
        left = int(rng.integers(0, width - hw + 1))
        raw[top:top + hh, left:left + hw] = 0.0
    speckle = rng.uniform(size=(height, width)) < rng.uniform(0.06, 0.12)
    raw[speckle] = 0.0

    # tiny images can undershoot the speckle expectation; top up deterministically
    need = int(np.ceil(MIN_HOLE_FRACTION * height * width))
    while (raw == 0).sum() < need:
        raw[rng.integers(0, height), rng.integers(0, width)] = 0.0
    hole_fraction = (raw == 0).mean()
    if hole_fraction > MAX_HOLE_FRACTION:
        raise AssertionError(f"hole fraction {hole_fraction:.3f} exceeded the generator bound")

    return rgb.astype(np.float32), gt.astype(np.float32), raw.astype(np.float32)


def make_synthetic(out_dir: str, count: int, seed: int, height: int = 64,
                   width: int = 64, depth_scale: float = 4000.0) -> str:
    """Write ``count`` scenes plus a manifest into ``out_dir``.

    Returns the manifest path.  count=0 produces an empty manifest.
    """
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    if height < 8 or width < 8:
        raise ValueError(f"scenes must be at least 8x8, got {height}x{width}")
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i in range(count):
        rng = np.random.default_rng((seed, i))
        rgb, gt, raw = generate_scene(rng, height, width)
        names = (f"scene_{i:04d}_rgb.png", f"scene_{i:04d}_raw.png", f"scene_{i:04d}_gt.png")
        save_rgb(RgbImage(rgb), os.path.join(out_dir, names[0]))
        save_depth(DepthImage(raw), os.path.join(out_dir, names[1]), depth_scale)
        save_depth(DepthImage(gt), os.path.join(out_dir, names[2]), depth_scale)
        entries.append(ManifestEntry(*names))
    manifest_path = os.path.join(out_dir, "manifest.tsv")
    write_manifest(entries, manifest_path)
    return manifest_path
