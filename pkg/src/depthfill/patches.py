"""Patch tokenization and random masking.

Images are cut into non-overlapping square patches in raster order, one
token per patch.  A token stores its patch channel-major: all of channel
0's p*p values first, then channel 1's, and so on.  Masking draws a
uniformly random subset of token indices from a seeded generator, so a
plan is fully reproducible from its seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from depthfill.tensor import Tensor, gather


@dataclass(frozen=True)
class PatchGrid:
    """Geometry of the token grid for one image size."""

    patch_size: int
    grid_h: int
    grid_w: int

    def __post_init__(self):
        if self.patch_size < 1 or self.grid_h < 1 or self.grid_w < 1:
            raise ValueError(
                f"patch grid must be positive, got patch_size={self.patch_size}, "
                f"grid {self.grid_h}x{self.grid_w}"
            )

    @classmethod
    def for_image(cls, height: int, width: int, patch_size: int) -> "PatchGrid":
        if height % patch_size or width % patch_size:
            raise ValueError(
                f"image {height}x{width} is not divisible by patch size {patch_size}"
            )
        return cls(patch_size, height // patch_size, width // patch_size)

    @property
    def num_tokens(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def image_height(self) -> int:
        return self.grid_h * self.patch_size

    @property
    def image_width(self) -> int:
        return self.grid_w * self.patch_size

    def token_dim(self, channels: int) -> int:
        return channels * self.patch_size * self.patch_size


@dataclass(frozen=True, eq=False)
class MaskPlan:
    """One reproducible masking decision.

    ``kept`` and ``masked`` are sorted, disjoint, and together cover
    range(num_tokens).  ``restore_perm`` maps raster position r to the row
    index of token r inside concat(kept_rows, masked_rows), which is how
    the decoder rebuilds raster order after mask tokens are appended.
    """

    kept: np.ndarray
    masked: np.ndarray
    restore_perm: np.ndarray
    seed: int

    @property
    def num_tokens(self) -> int:
        return self.kept.size + self.masked.size


def sample_mask(num_tokens: int, mask_ratio: float, seed: int) -> MaskPlan:
    """Draw a uniform MaskPlan hiding round(mask_ratio * num_tokens) tokens.

    The count uses banker's rounding, so a tie like 1.5 rounds to 2 and
    2.5 rounds to 2.  The same (num_tokens, mask_ratio, seed) triple
    always yields the same plan.
    """
    if num_tokens < 1:
        raise ValueError(f"num_tokens must be positive, got {num_tokens}")
    if not 0.0 <= mask_ratio <= 1.0:
        raise ValueError(f"mask_ratio must lie in [0, 1], got {mask_ratio}")
    n_masked = int(round(mask_ratio * num_tokens))
    perm = np.random.default_rng(seed).permutation(num_tokens)
    masked = np.sort(perm[:n_masked]).astype(np.int64)
    kept = np.sort(perm[n_masked:]).astype(np.int64)
    restore_perm = np.argsort(np.concatenate([kept, masked])).astype(np.int64)
    return MaskPlan(kept=kept, masked=masked, restore_perm=restore_perm, seed=seed)


def full_plan(num_tokens: int) -> MaskPlan:
    """The trivial plan that keeps every token (mask ratio zero)."""
    return sample_mask(num_tokens, 0.0, seed=0)


def patchify(image: Tensor, grid: PatchGrid) -> Tensor:
    """[C, H, W] image to [num_tokens, C * p * p] tokens, raster order."""
    c, h, w = image.shape
    if h != grid.image_height or w != grid.image_width:
        raise ValueError(
            f"image {h}x{w} does not match grid "
            f"{grid.image_height}x{grid.image_width}"
        )
    p = grid.patch_size
    return (
        image.reshape(c, grid.grid_h, p, grid.grid_w, p)
        .transpose(1, 3, 0, 2, 4)
        .reshape(grid.num_tokens, grid.token_dim(c))
    )


def unpatchify(tokens: Tensor, grid: PatchGrid, channels: int) -> Tensor:
    """Exact inverse of patchify: [num_tokens, C * p * p] back to [C, H, W]."""
    if tokens.shape != (grid.num_tokens, grid.token_dim(channels)):
        raise ValueError(
            f"tokens {tokens.shape} do not match grid with {grid.num_tokens} "
            f"tokens of dim {grid.token_dim(channels)}"
        )
    p = grid.patch_size
    return (
        tokens.reshape(grid.grid_h, grid.grid_w, channels, p, p)
        .transpose(2, 0, 3, 1, 4)
        .reshape(channels, grid.image_height, grid.image_width)
    )


def apply_mask(tokens: Tensor, plan: MaskPlan) -> Tensor:
    """Keep only the plan's unmasked token rows, in ascending index order."""
    if tokens.shape[0] != plan.num_tokens:
        raise ValueError(
            f"plan covers {plan.num_tokens} tokens but got {tokens.shape[0]} rows"
        )
    return gather(tokens, plan.kept)


def masked_pixel_map(plan: MaskPlan, grid: PatchGrid) -> np.ndarray:
    """Boolean [H, W] map of the pixels inside masked patches."""
    token_map = np.zeros(grid.num_tokens, dtype=bool)
    token_map[plan.masked] = True
    token_map = token_map.reshape(grid.grid_h, grid.grid_w)
    p = grid.patch_size
    return np.repeat(np.repeat(token_map, p, axis=0), p, axis=1)
