"""Losses, the optimizer, and the two training loops.

Both stages minimize a root-mean-square depth error in meters.
Pre-training scores only pixels that are inside masked patches and have
a ground-truth measurement; fine-tuning scores every pixel, holes
included, so the network also learns to echo the measured regions.

Determinism: parameter init, epoch shuffling, and per-sample mask plans
are all derived from (seed, epoch, sample index) with no hidden RNG
state, so a run resumed from any epoch checkpoint continues exactly as
the uninterrupted run would, and two runs with the same seed produce
identical checkpoints.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from depthfill.checkpoint import (
    Checkpoint,
    load_checkpoint,
    load_into,
    params_from_checkpoint,
    save_checkpoint,
)
from depthfill.imaging import (
    DEFAULT_DEPTH_SCALE,
    DatasetManifest,
    DepthImage,
    RgbdSample,
    load_sample,
    resize_sample,
)
from depthfill.model import (
    ModelConfig,
    ModelParams,
    forward_finetune,
    forward_pretrain,
    init_params,
)
from depthfill.patches import MaskPlan, PatchGrid, masked_pixel_map, sample_mask
from depthfill.tensor import Tensor

STAGE_DEFAULT_EPOCHS = {"pretrain": 200, "finetune": 20}
STAGE_DEFAULT_LR = {"pretrain": 1.5e-4, "finetune": 1.0e-4}


class EmptyLossRegion(Exception):
    """Raised when a loss has no pixel to score; the loop counts and skips."""


@dataclass
class TrainConfig:
    stage: str
    epochs: int | None = None  # stage default: 200 pre-train, 20 fine-tune
    batch_size: int = 8
    learning_rate: float | None = None  # stage default: 1.5e-4 / 1e-4
    weight_decay: float = 0.05
    seed: int = 0
    checkpoint_every: int = 0  # epochs between snapshots; 0 keeps only the final
    resume_path: str | None = None
    precision: int = 32
    shuffle: bool = True
    cosine_lr: bool = False  # constant lr unless enabled
    resample_masks: bool = True  # False pins one mask per sample (overfit checks)
    depth_scale: float = DEFAULT_DEPTH_SCALE

    def __post_init__(self):
        if self.stage not in STAGE_DEFAULT_EPOCHS:
            raise ValueError(f"stage must be 'pretrain' or 'finetune', got {self.stage!r}")
        if self.epochs is not None and self.epochs < 1:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.precision not in (32, 64):
            raise ValueError(f"precision must be 32 or 64, got {self.precision}")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.checkpoint_every < 0:
            raise ValueError(f"checkpoint_every must be non-negative, got {self.checkpoint_every}")

    @property
    def resolved_epochs(self) -> int:
        return self.epochs if self.epochs is not None else STAGE_DEFAULT_EPOCHS[self.stage]

    @property
    def resolved_lr(self) -> float:
        return self.learning_rate if self.learning_rate is not None else STAGE_DEFAULT_LR[self.stage]

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32


def _as_depth_array(gt, dtype) -> np.ndarray:
    arr = gt.values if isinstance(gt, DepthImage) else np.asarray(gt)
    return arr.astype(dtype, copy=False)


def loss_pretrain(pred: Tensor, gt, plan: MaskPlan, grid: PatchGrid) -> Tensor:
    """RMSE in meters over pixels that are masked AND measured in gt.

    Unmasked pixels and gt holes contribute nothing.  When the region is
    empty the loss is undefined; EmptyLossRegion signals the caller to
    skip instead of producing a NaN.
    """
    gt_arr = _as_depth_array(gt, pred.dtype)
    if pred.shape != gt_arr.shape:
        raise ValueError(f"prediction {pred.shape} does not match gt {gt_arr.shape}")
    region = masked_pixel_map(plan, grid) & (gt_arr > 0)
    count = int(region.sum())
    if count == 0:
        raise EmptyLossRegion("no masked pixel carries a gt measurement")
    weights = Tensor(region.astype(pred.dtype))
    diff = (pred - Tensor(gt_arr)) * weights
    return ((diff * diff).sum() / float(count)).sqrt()


def loss_finetune(pred: Tensor, gt) -> Tensor:
    """RMSE in meters over every pixel, gt holes included."""
    gt_arr = _as_depth_array(gt, pred.dtype)
    if pred.shape != gt_arr.shape:
        raise ValueError(f"prediction {pred.shape} does not match gt {gt_arr.shape}")
    diff = pred - Tensor(gt_arr)
    return (diff * diff).mean().sqrt()


@dataclass
class AdamWState:
    """First/second moments per parameter plus the shared step count."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamWState":
        named = params.named()
        return cls(
            m={k: np.zeros(t.shape, dtype=t.dtype) for k, t in named.items()},
            v={k: np.zeros(t.shape, dtype=t.dtype) for k, t in named.items()},
        )

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {"opt.step": np.array(self.step, dtype=np.int64)}
        out.update({f"opt.m.{k}": v for k, v in self.m.items()})
        out.update({f"opt.v.{k}": v for k, v in self.v.items()})
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "AdamWState":
        state = cls(step=int(arrays["opt.step"]))
        for key, arr in arrays.items():
            if key.startswith("opt.m."):
                state.m[key[6:]] = arr
            elif key.startswith("opt.v."):
                state.v[key[6:]] = arr
        return state


def optimizer_step(params: ModelParams, state: AdamWState, lr: float,
                   weight_decay: float, beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> None:
    """One AdamW update: bias-corrected moments, decoupled weight decay.

    A parameter whose grad is None is treated as having a zero gradient,
    so with zero weight decay it stays put.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.named().items():
        g = p.grad if p.grad is not None else np.zeros(p.shape, dtype=p.dtype)
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + eps) + weight_decay * p.data
        p.data = p.data - lr * update


@dataclass
class TrainResult:
    checkpoint_path: str
    epoch_losses: list[float]
    skipped_samples: int
    adopted_tensors: list[str]
    metrics_path: str

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1]


def plan_seed(seed: int, epoch: int, index: int) -> int:
    """Seed of the mask plan drawn for sample ``index`` in ``epoch``.

    Pre-training resamples plans every epoch (epoch numbers start at 1);
    with ``resample_masks=False`` the loop passes epoch 0 here, giving
    every epoch the same per-sample plan.
    """
    return int(np.random.SeedSequence((seed, epoch, index)).generate_state(1)[0])


def _epoch_order(n: int, seed: int, epoch: int, shuffle: bool) -> np.ndarray:
    if not shuffle:
        return np.arange(n)
    return np.random.default_rng((seed, epoch, 0x5F0FF1E)).permutation(n)


def _load_training_samples(manifest: DatasetManifest, config: ModelConfig,
                           depth_scale: float) -> list[RgbdSample]:
    samples = []
    for entry in manifest:
        sample = load_sample(manifest, entry, depth_scale)
        if sample.gt_depth is None:
            raise ValueError(f"training requires ground truth, none for {entry.identifier!r}")
        samples.append(resize_sample(sample, config.image_size, config.image_size))
    if not samples:
        raise ValueError("manifest holds no samples")
    return samples


def _lr_at(train: TrainConfig, epoch: int) -> float:
    base = train.resolved_lr
    if not train.cosine_lr:
        return base
    total = max(train.resolved_epochs, 1)
    return base * 0.5 * (1.0 + float(np.cos(np.pi * (epoch - 1) / total)))


def _run_stage(stage: str, manifest: DatasetManifest, train: TrainConfig,
               out_dir: str, model_config: ModelConfig | None,
               init_checkpoint: str | None) -> TrainResult:
    if train.stage != stage:
        raise ValueError(f"TrainConfig.stage is {train.stage!r}, expected {stage!r}")
    os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.log")

    adopted: list[str] = []
    start_epoch = 1
    if train.resume_path:
        ckpt = load_checkpoint(train.resume_path)
        if ckpt.stage != stage:
            raise ValueError(
                f"resume checkpoint is for stage {ckpt.stage!r}, not {stage!r}"
            )
        if model_config is not None and ckpt.config != model_config:
            raise ValueError("resume checkpoint config differs from the requested one")
        config = ckpt.config
        params = params_from_checkpoint(ckpt)
        state = AdamWState.from_arrays(ckpt.state)
        start_epoch = int(ckpt.meta.get("epochs_completed", 0)) + 1
    elif init_checkpoint is not None:
        ckpt = load_checkpoint(init_checkpoint)
        config = model_config if model_config is not None else ckpt.config
        params = init_params(config, seed=train.seed, dtype=train.dtype)
        adopted, _ = load_into(params, ckpt.params, strict=False)
        state = AdamWState.for_params(params)
    else:
        if model_config is None:
            raise ValueError("model_config is required when starting from scratch")
        config = model_config
        params = init_params(config, seed=train.seed, dtype=train.dtype)
        state = AdamWState.for_params(params)

    samples = _load_training_samples(manifest, config, train.depth_scale)
    grid = config.grid
    epochs = train.resolved_epochs
    epoch_losses: list[float] = []
    skipped = 0

    mode = "a" if train.resume_path and os.path.exists(metrics_path) else "w"
    with open(metrics_path, mode, encoding="utf-8") as metrics:
        if mode == "w":
            metrics.write("epoch\tmean_loss_m\twall_seconds\n")
        final_path = os.path.join(out_dir, "checkpoints", "final.npz")
        for epoch in range(start_epoch, epochs + 1):
            tick = time.perf_counter()
            order = _epoch_order(len(samples), train.seed, epoch, train.shuffle)
            lr = _lr_at(train, epoch)
            sample_losses: list[float] = []
            for lo in range(0, len(order), train.batch_size):
                batch = order[lo:lo + train.batch_size]
                losses = []
                for idx in batch:
                    idx = int(idx)
                    sample = samples[idx]
                    if stage == "pretrain":
                        plan_epoch = epoch if train.resample_masks else 0
                        plan = sample_mask(grid.num_tokens, config.mask_ratio,
                                           plan_seed(train.seed, plan_epoch, idx))
                        pred = forward_pretrain(sample, plan, params)
                        try:
                            losses.append(loss_pretrain(pred, sample.gt_depth, plan, grid))
                        except EmptyLossRegion:
                            skipped += 1
                    else:
                        pred = forward_finetune(sample, params)
                        losses.append(loss_finetune(pred, sample.gt_depth))
                if not losses:
                    continue
                total = losses[0]
                for extra in losses[1:]:
                    total = total + extra
                total = total * (1.0 / len(losses))
                params.zero_grad()
                total.backward()
                optimizer_step(params, state, lr, train.weight_decay)
                sample_losses.extend(float(l.data) for l in losses)
            mean_loss = float(np.mean(sample_losses)) if sample_losses else float("nan")
            epoch_losses.append(mean_loss)
            wall = time.perf_counter() - tick
            metrics.write(f"{epoch}\t{mean_loss:.10g}\t{wall:.3f}\n")
            metrics.flush()
            meta = {"epochs_completed": epoch, "train": asdict(train)}
            if train.checkpoint_every and epoch % train.checkpoint_every == 0 and epoch < epochs:
                save_checkpoint(
                    os.path.join(out_dir, "checkpoints", f"epoch_{epoch:05d}.npz"),
                    params, stage, state.to_arrays(), meta,
                )
        final_path = save_checkpoint(final_path, params, stage, state.to_arrays(),
                                     {"epochs_completed": epochs, "train": asdict(train)})
    return TrainResult(
        checkpoint_path=final_path,
        epoch_losses=epoch_losses,
        skipped_samples=skipped,
        adopted_tensors=adopted,
        metrics_path=metrics_path,
    )


def run_pretrain(manifest: DatasetManifest, model_config: ModelConfig,
                 train: TrainConfig, out_dir: str) -> TrainResult:
    """Train the masked reconstruction stage; returns the final checkpoint."""
    return _run_stage("pretrain", manifest, train, out_dir, model_config, None)


def run_finetune(manifest: DatasetManifest, train: TrainConfig, out_dir: str,
                 model_config: ModelConfig | None = None,
                 init_checkpoint: str | None = None) -> TrainResult:
    """Train the completion stage, warm-started from a pre-train checkpoint
    when one is given (every name+shape match is adopted, the rest stay
    fresh), or from scratch with an explicit model_config."""
    if model_config is None and init_checkpoint is None and train.resume_path is None:
        raise ValueError("fine-tuning needs a model_config, an init checkpoint, or a resume path")
    return _run_stage("finetune", manifest, train, out_dir, model_config, init_checkpoint)
