"""Completion inference and depth fusion.

The fused map keeps every measured pixel of the original sensor depth
bit for bit and consults the network only where the sensor saw nothing:

    fused(p) = original(p)   if original(p) != 0
             = completed(p)  otherwise
"""

from __future__ import annotations

import numpy as np

from depthfill.checkpoint import Checkpoint, load_checkpoint, params_from_checkpoint
from depthfill.imaging import DepthImage, RgbdSample, resize_depth, resize_sample
from depthfill.model import forward_finetune
from depthfill.tensor import no_grad


def fuse(original: DepthImage, completed: DepthImage) -> DepthImage:
    """Per-pixel case split; never rewrites a valid original pixel."""
    if original.values.shape != completed.values.shape:
        raise ValueError(
            f"original {original.values.shape} does not match "
            f"completed {completed.values.shape}"
        )
    return DepthImage(np.where(original.values != 0, original.values, completed.values))


def complete(sample: RgbdSample, checkpoint: str | Checkpoint) -> DepthImage:
    """Predict a dense depth map for the sample at its native resolution.

    The checkpoint must come from fine-tuning.  The sample is stretched
    to the model size, predicted, clamped at zero, and brought back to
    the native size with nearest-neighbor (which commutes with the
    clamp, so measured-size fusion sees no negative values).
    """
    ckpt = load_checkpoint(checkpoint) if not isinstance(checkpoint, Checkpoint) else checkpoint
    if ckpt.stage != "finetune":
        raise ValueError(f"completion needs a finetune checkpoint, got stage {ckpt.stage!r}")
    params = params_from_checkpoint(ckpt)
    config = ckpt.config
    sized = resize_sample(sample, config.image_size, config.image_size)
    with no_grad():
        pred = forward_finetune(sized, params).data
    clamped = DepthImage(np.maximum(pred, 0.0).astype(np.float32))
    return resize_depth(clamped, sample.raw_depth.height, sample.raw_depth.width)


def complete_and_fuse(sample: RgbdSample, checkpoint: str | Checkpoint) -> DepthImage:
    """Completion followed by fusion with the sample's own sensor depth."""
    return fuse(sample.raw_depth, complete(sample, checkpoint))
