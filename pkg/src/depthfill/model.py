"""Masked-autoencoder vision transformer for depth completion.

Stage one masks most of the RGB + true-depth tokens and trains the
encoder/decoder pair to reconstruct the hidden depth.  Stage two feeds
the full RGB + sensor-depth token stream (no masking) and adds a
residual fusion of the raw depth tokens into the decoder input, so the
decoder can both trust measured pixels and fill the holes.

Blocks are pre-norm (layernorm before attention and before the MLP)
and a final layernorm closes each stack; there is no class token, no
dropout, and the output head predicts one depth value per pixel of
each patch.  Defaults follow the published
recipe: 224 inputs with 16-pixel patches, a 24-layer/16-head/1024-dim
encoder, an 8-layer/16-head/512-dim decoder, and 75% masking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from depthfill.imaging import RgbdSample, to_model_input
from depthfill.patches import MaskPlan, PatchGrid, apply_mask, patchify, unpatchify
from depthfill.tensor import Tensor, concat, gather, gelu, layernorm, linear, softmax


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 224
    patch_size: int = 16
    channels: int = 4
    enc_layers: int = 24
    enc_heads: int = 16
    enc_dim: int = 1024
    dec_layers: int = 8
    dec_heads: int = 16
    dec_dim: int = 512
    mlp_ratio: float = 4.0
    mask_ratio: float = 0.75
    max_depth: float = 8.0

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.enc_dim % self.enc_heads:
            raise ValueError(f"enc_dim {self.enc_dim} not divisible by enc_heads {self.enc_heads}")
        if self.dec_dim % self.dec_heads:
            raise ValueError(f"dec_dim {self.dec_dim} not divisible by dec_heads {self.dec_heads}")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ValueError(f"mask_ratio must lie in [0, 1], got {self.mask_ratio}")
        if self.max_depth <= 0:
            raise ValueError(f"max_depth must be positive, got {self.max_depth}")
        for name in ("image_size", "patch_size", "channels", "enc_layers", "enc_heads",
                     "enc_dim", "dec_layers", "dec_heads", "dec_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def grid(self) -> PatchGrid:
        return PatchGrid.for_image(self.image_size, self.image_size, self.patch_size)

    @property
    def num_tokens(self) -> int:
        return self.grid.num_tokens

    @property
    def token_dim(self) -> int:
        return self.channels * self.patch_size * self.patch_size

    @property
    def pixels_per_patch(self) -> int:
        return self.patch_size * self.patch_size


@dataclass
class BlockParams:
    ln1_g: Tensor
    ln1_b: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor

    FIELD_NAMES = (
        "ln1.g", "ln1.b", "attn.wq", "attn.bq", "attn.wk", "attn.bk",
        "attn.wv", "attn.bv", "attn.wo", "attn.bo", "ln2.g", "ln2.b",
        "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
    )

    def named(self, prefix: str):
        attrs = (self.ln1_g, self.ln1_b, self.wq, self.bq, self.wk, self.bk,
                 self.wv, self.bv, self.wo, self.bo, self.ln2_g, self.ln2_b,
                 self.mlp_w1, self.mlp_b1, self.mlp_w2, self.mlp_b2)
        for name, tensor in zip(self.FIELD_NAMES, attrs):
            yield f"{prefix}.{name}", tensor


@dataclass
class ModelParams:
    """Every learnable tensor, addressable by a stable dotted name."""

    config: ModelConfig
    patch_embed_w: Tensor
    patch_embed_b: Tensor
    enc_pos: Tensor
    enc_blocks: list[BlockParams]
    enc_norm_g: Tensor
    enc_norm_b: Tensor
    enc_to_dec_w: Tensor
    enc_to_dec_b: Tensor
    mask_token: Tensor
    dec_pos: Tensor
    dec_blocks: list[BlockParams]
    dec_norm_g: Tensor
    dec_norm_b: Tensor
    head_w: Tensor
    head_b: Tensor
    fusion_w: Tensor
    fusion_b: Tensor

    def named(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {
            "patch_embed.w": self.patch_embed_w,
            "patch_embed.b": self.patch_embed_b,
            "enc_pos": self.enc_pos,
        }
        for i, block in enumerate(self.enc_blocks):
            out.update(block.named(f"enc.{i}"))
        out["enc_norm.g"] = self.enc_norm_g
        out["enc_norm.b"] = self.enc_norm_b
        out["enc_to_dec.w"] = self.enc_to_dec_w
        out["enc_to_dec.b"] = self.enc_to_dec_b
        out["mask_token"] = self.mask_token
        out["dec_pos"] = self.dec_pos
        for i, block in enumerate(self.dec_blocks):
            out.update(block.named(f"dec.{i}"))
        out["dec_norm.g"] = self.dec_norm_g
        out["dec_norm.b"] = self.dec_norm_b
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        out["fusion.w"] = self.fusion_w
        out["fusion.b"] = self.fusion_b
        return out

    @property
    def dtype(self):
        return self.patch_embed_w.dtype

    def zero_grad(self) -> None:
        for tensor in self.named().values():
            tensor.zero_grad()


WEIGHT_STD = 0.02  # every linear weight, embedding, and the mask token


def _init_block(rng: np.random.Generator, dim: int, hidden: int, dtype) -> BlockParams:
    def lin(fan_in, fan_out):
        w = rng.normal(0.0, WEIGHT_STD, (fan_in, fan_out))
        return Tensor(w.astype(dtype), requires_grad=True)

    def zeros(n):
        return Tensor(np.zeros(n, dtype=dtype), requires_grad=True)

    def ones(n):
        return Tensor(np.ones(n, dtype=dtype), requires_grad=True)

    return BlockParams(
        ln1_g=ones(dim), ln1_b=zeros(dim),
        wq=lin(dim, dim), bq=zeros(dim),
        wk=lin(dim, dim), bk=zeros(dim),
        wv=lin(dim, dim), bv=zeros(dim),
        wo=lin(dim, dim), bo=zeros(dim),
        ln2_g=ones(dim), ln2_b=zeros(dim),
        mlp_w1=lin(dim, hidden), mlp_b1=zeros(hidden),
        mlp_w2=lin(hidden, dim), mlp_b2=zeros(dim),
    )


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Gaussian weights and embeddings at std 0.02, zero biases, unit norms.

    The same (config, seed, dtype) always produces bitwise-identical
    parameters.
    """
    rng = np.random.default_rng(seed)
    L = config.num_tokens

    def lin(fan_in, fan_out):
        w = rng.normal(0.0, WEIGHT_STD, (fan_in, fan_out))
        return Tensor(w.astype(dtype), requires_grad=True)

    def embed(*shape):
        return Tensor(rng.normal(0.0, WEIGHT_STD, shape).astype(dtype), requires_grad=True)

    def zeros(n):
        return Tensor(np.zeros(n, dtype=dtype), requires_grad=True)

    def ones(n):
        return Tensor(np.ones(n, dtype=dtype), requires_grad=True)

    enc_hidden = int(config.enc_dim * config.mlp_ratio)
    dec_hidden = int(config.dec_dim * config.mlp_ratio)
    return ModelParams(
        config=config,
        patch_embed_w=lin(config.token_dim, config.enc_dim),
        patch_embed_b=zeros(config.enc_dim),
        enc_pos=embed(L, config.enc_dim),
        enc_blocks=[_init_block(rng, config.enc_dim, enc_hidden, dtype)
                    for _ in range(config.enc_layers)],
        enc_norm_g=ones(config.enc_dim),
        enc_norm_b=zeros(config.enc_dim),
        enc_to_dec_w=lin(config.enc_dim, config.dec_dim),
        enc_to_dec_b=zeros(config.dec_dim),
        mask_token=embed(config.dec_dim),
        dec_pos=embed(L, config.dec_dim),
        dec_blocks=[_init_block(rng, config.dec_dim, dec_hidden, dtype)
                    for _ in range(config.dec_layers)],
        dec_norm_g=ones(config.dec_dim),
        dec_norm_b=zeros(config.dec_dim),
        head_w=lin(config.dec_dim, config.pixels_per_patch),
        head_b=zeros(config.pixels_per_patch),
        fusion_w=lin(config.pixels_per_patch, config.dec_dim),
        fusion_b=zeros(config.dec_dim),
    )


def _attention(x: Tensor, block: BlockParams, heads: int) -> Tensor:
    n, dim = x.shape
    dh = dim // heads
    q = linear(x, block.wq, block.bq).reshape(n, heads, dh).transpose(1, 0, 2)
    k = linear(x, block.wk, block.bk).reshape(n, heads, dh).transpose(1, 0, 2)
    v = linear(x, block.wv, block.bv).reshape(n, heads, dh).transpose(1, 0, 2)
    scores = (q @ k.transpose(0, 2, 1)) * (1.0 / math.sqrt(dh))
    mixed = softmax(scores, axis=-1) @ v
    out = mixed.transpose(1, 0, 2).reshape(n, dim)
    return linear(out, block.wo, block.bo)


def _block(x: Tensor, block: BlockParams, heads: int) -> Tensor:
    x = x + _attention(layernorm(x, block.ln1_g, block.ln1_b), block, heads)
    hidden = gelu(linear(layernorm(x, block.ln2_g, block.ln2_b), block.mlp_w1, block.mlp_b1))
    return x + linear(hidden, block.mlp_w2, block.mlp_b2)


def encode(tokens: Tensor, plan: MaskPlan | None, params: ModelParams) -> Tensor:
    """Embed tokens, drop the masked ones, add position rows, run the encoder.

    With ``plan=None`` (or a plan that masks nothing) every token goes
    through; the two cases are bitwise identical.
    """
    config = params.config
    if tokens.shape != (config.num_tokens, config.token_dim):
        raise ValueError(
            f"tokens {tokens.shape} do not match config "
            f"({config.num_tokens}, {config.token_dim})"
        )
    x = linear(tokens, params.patch_embed_w, params.patch_embed_b)
    if plan is None:
        pos = params.enc_pos
    else:
        if plan.kept.size == 0:
            raise ValueError("mask plan keeps no tokens; nothing to encode")
        x = apply_mask(x, plan)
        pos = gather(params.enc_pos, plan.kept)
    x = x + pos
    for block in params.enc_blocks:
        x = _block(x, block, config.enc_heads)
    return layernorm(x, params.enc_norm_g, params.enc_norm_b)


def project_to_decoder(enc_out: Tensor, params: ModelParams) -> Tensor:
    return linear(enc_out, params.enc_to_dec_w, params.enc_to_dec_b)


def assemble_decoder_input(projected: Tensor, plan: MaskPlan | None,
                           params: ModelParams) -> Tensor:
    """Fill masked slots with the shared mask token, restore raster order,
    and add decoder position rows to every token."""
    config = params.config
    L = config.num_tokens
    if plan is None or plan.masked.size == 0:
        if projected.shape[0] != L:
            raise ValueError(f"expected {L} projected tokens, got {projected.shape[0]}")
        full = projected
    else:
        if projected.shape[0] != plan.kept.size:
            raise ValueError(
                f"plan keeps {plan.kept.size} tokens but got {projected.shape[0]} rows"
            )
        fill = Tensor(np.zeros((plan.masked.size, config.dec_dim), dtype=params.dtype))
        mask_rows = fill + params.mask_token
        full = gather(concat([projected, mask_rows], axis=0), plan.restore_perm)
    return full + params.dec_pos


def fuse_depth_tokens(dec_in: Tensor, raw_depth_tokens: Tensor, params: ModelParams,
                      plan: MaskPlan | None = None) -> Tensor:
    """Residual connection from embedded raw-depth tokens into the decoder
    input.  Fine-tuning only: a plan that actually masks is an error."""
    if plan is not None and plan.masked.size > 0:
        raise ValueError("token fusion requires the unmasked token stream")
    config = params.config
    if raw_depth_tokens.shape != (config.num_tokens, config.pixels_per_patch):
        raise ValueError(
            f"raw depth tokens {raw_depth_tokens.shape} do not match "
            f"({config.num_tokens}, {config.pixels_per_patch})"
        )
    return dec_in + linear(raw_depth_tokens, params.fusion_w, params.fusion_b)


def decode(dec_in: Tensor, params: ModelParams) -> Tensor:
    """Run the decoder blocks and project each token to its patch of depth."""
    x = dec_in
    for block in params.dec_blocks:
        x = _block(x, block, params.config.dec_heads)
    x = layernorm(x, params.dec_norm_g, params.dec_norm_b)
    return linear(x, params.head_w, params.head_b)


def _predict_depth(dec_out: Tensor, params: ModelParams) -> Tensor:
    config = params.config
    norm = unpatchify(dec_out, config.grid, channels=1)
    return norm.reshape(config.image_size, config.image_size) * config.max_depth


def forward_pretrain(sample: RgbdSample, plan: MaskPlan | None,
                     params: ModelParams) -> Tensor:
    """Reconstruct depth from masked RGB + true-depth tokens.

    Returns the full [H, W] prediction in meters; the pre-training loss
    reads only the masked region of it.
    """
    config = params.config
    x = to_model_input(sample, depth_source="gt", max_depth=config.max_depth,
                       dtype=params.dtype)
    tokens = patchify(x, config.grid)
    enc_out = encode(tokens, plan, params)
    projected = project_to_decoder(enc_out, params)
    dec_in = assemble_decoder_input(projected, plan, params)
    return _predict_depth(decode(dec_in, params), params)


def forward_finetune(sample: RgbdSample, params: ModelParams) -> Tensor:
    """Complete the sensor depth: full token stream, raw-depth fusion, no mask."""
    config = params.config
    x = to_model_input(sample, depth_source="raw", max_depth=config.max_depth,
                       dtype=params.dtype)
    tokens = patchify(x, config.grid)
    enc_out = encode(tokens, None, params)
    projected = project_to_decoder(enc_out, params)
    dec_in = assemble_decoder_input(projected, None, params)
    raw_tokens = patchify(Tensor(x.data[3:4]), config.grid)
    fused = fuse_depth_tokens(dec_in, raw_tokens, params)
    return _predict_depth(decode(fused, params), params)
