"""Depth completion for RGB-D captures.

A masked-autoencoder vision transformer is pre-trained to reconstruct
hidden patches of RGB + depth images, then fine-tuned with a token-level
residual fusion of the raw depth to fill holes in sensor depth maps.
Everything runs on a small reverse-mode autodiff engine over NumPy.
"""

from depthfill.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from depthfill.fusion import complete, complete_and_fuse, fuse
from depthfill.imaging import (
    DatasetManifest,
    DepthImage,
    ManifestEntry,
    RgbdSample,
    RgbImage,
    load_depth,
    load_rgb,
    read_manifest,
    resize_sample,
    save_depth,
    save_rgb,
    to_model_input,
    write_manifest,
)
from depthfill.metrics import EvalReport, EvalRow, delta_ratio, evaluate, mean_error, rmse, ssim
from depthfill.model import (
    ModelConfig,
    ModelParams,
    forward_finetune,
    forward_pretrain,
    init_params,
)
from depthfill.patches import MaskPlan, PatchGrid, patchify, sample_mask, unpatchify
from depthfill.synthetic import make_synthetic
from depthfill.tensor import Tensor, no_grad
from depthfill.training import (
    TrainConfig,
    TrainResult,
    loss_finetune,
    loss_pretrain,
    run_finetune,
    run_pretrain,
)

__all__ = [
    "Checkpoint",
    "DatasetManifest",
    "DepthImage",
    "EvalReport",
    "EvalRow",
    "ManifestEntry",
    "MaskPlan",
    "ModelConfig",
    "ModelParams",
    "PatchGrid",
    "RgbImage",
    "RgbdSample",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "complete",
    "complete_and_fuse",
    "delta_ratio",
    "evaluate",
    "forward_finetune",
    "forward_pretrain",
    "fuse",
    "init_params",
    "load_checkpoint",
    "load_depth",
    "load_rgb",
    "loss_finetune",
    "loss_pretrain",
    "make_synthetic",
    "mean_error",
    "no_grad",
    "patchify",
    "read_manifest",
    "resize_sample",
    "rmse",
    "run_finetune",
    "run_pretrain",
    "sample_mask",
    "save_checkpoint",
    "save_depth",
    "save_rgb",
    "ssim",
    "to_model_input",
    "unpatchify",
    "write_manifest",
]
__version__ = "0.1.0"
