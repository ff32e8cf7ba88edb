"""Model contracts: shapes, masking equivalences, fusion rules, and the
information-flow properties that make the two stages meaningful."""

import numpy as np
import pytest

from depthfill.imaging import DepthImage, RgbdSample, RgbImage
from depthfill.model import (
    ModelConfig,
    assemble_decoder_input,
    decode,
    encode,
    forward_finetune,
    forward_pretrain,
    fuse_depth_tokens,
    init_params,
    project_to_decoder,
)
from depthfill.patches import full_plan, masked_pixel_map, patchify, sample_mask
from depthfill.tensor import Tensor

TINY = ModelConfig(image_size=8, patch_size=4, enc_layers=1, enc_heads=2, enc_dim=8,
                   dec_layers=1, dec_heads=2, dec_dim=8)


def tiny_params(seed=0, dtype=np.float64):
    return init_params(TINY, seed=seed, dtype=dtype)


def tiny_sample(seed=0, h=8, w=8):
    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.5, 4.0, (h, w)).astype(np.float32)
    raw[rng.uniform(size=(h, w)) < 0.25] = 0.0
    return RgbdSample(
        identifier=f"t{seed}",
        rgb=RgbImage(rng.uniform(0, 1, (h, w, 3)).astype(np.float32)),
        raw_depth=DepthImage(raw),
        gt_depth=DepthImage(rng.uniform(0.5, 4.0, (h, w)).astype(np.float32)),
    )


def tiny_tokens(seed=0, dtype=np.float64):
    rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal((TINY.num_tokens, TINY.token_dim)).astype(dtype))


def test_config_validates_divisibility():
    with pytest.raises(ValueError, match="divisible"):
        ModelConfig(image_size=10, patch_size=4)
    with pytest.raises(ValueError, match="enc_heads"):
        ModelConfig(image_size=8, patch_size=4, enc_dim=10, enc_heads=4)


def test_default_config_matches_published_recipe():
    config = ModelConfig()
    assert (config.image_size, config.channels) == (224, 4)
    assert (config.enc_layers, config.enc_heads, config.enc_dim) == (24, 16, 1024)
    assert (config.dec_layers, config.dec_heads, config.dec_dim) == (8, 16, 512)
    assert config.mask_ratio == 0.75
    assert config.num_tokens == 196


def test_shapes_through_the_pipeline():
    params = tiny_params()
    tokens = tiny_tokens()
    plan = sample_mask(TINY.num_tokens, 0.75, seed=1)
    enc = encode(tokens, plan, params)
    assert enc.shape == (plan.kept.size, TINY.enc_dim)
    projected = project_to_decoder(enc, params)
    assert projected.shape == (plan.kept.size, TINY.dec_dim)
    dec_in = assemble_decoder_input(projected, plan, params)
    assert dec_in.shape == (TINY.num_tokens, TINY.dec_dim)
    out = decode(dec_in, params)
    assert out.shape == (TINY.num_tokens, TINY.pixels_per_patch)


def test_zero_ratio_plan_equals_no_plan_bitwise():
    params = tiny_params()
    tokens = tiny_tokens()
    plan = sample_mask(TINY.num_tokens, 0.0, seed=3)
    with_plan = encode(tokens, plan, params)
    without = encode(tokens, None, params)
    np.testing.assert_array_equal(with_plan.data, without.data)
    a = assemble_decoder_input(project_to_decoder(with_plan, params), plan, params)
    b = assemble_decoder_input(project_to_decoder(without, params), None, params)
    np.testing.assert_array_equal(a.data, b.data)


def test_masked_token_contents_cannot_leak_into_encoding():
    params = tiny_params()
    tokens = tiny_tokens(seed=4)
    plan = sample_mask(TINY.num_tokens, 0.5, seed=5)
    scrambled = tokens.data.copy()
    scrambled[plan.masked] = 1234.5
    np.testing.assert_array_equal(
        encode(tokens, plan, params).data,
        encode(Tensor(scrambled), plan, params).data,
    )


def test_hidden_depth_cannot_leak_into_pretrain_prediction():
    params = tiny_params()
    plan = sample_mask(TINY.num_tokens, 0.75, seed=6)
    sample = tiny_sample(seed=7)
    pixmap = masked_pixel_map(plan, TINY.grid)
    altered_gt = sample.gt_depth.values.copy()
    altered_gt[pixmap] = 3.33
    altered = RgbdSample(sample.identifier, sample.rgb, sample.raw_depth,
                         DepthImage(altered_gt))
    np.testing.assert_array_equal(
        forward_pretrain(sample, plan, params).data,
        forward_pretrain(altered, plan, params).data,
    )


def test_encoder_is_permutation_equivariant():
    import dataclasses

    params = tiny_params(seed=8)
    tokens = tiny_tokens(seed=9)
    base = encode(tokens, None, params).data

    perm = np.array([1, 0, 2, 3])
    swapped_params = dataclasses.replace(
        params, enc_pos=Tensor(params.enc_pos.data[perm], requires_grad=True)
    )
    swapped = encode(Tensor(tokens.data[perm]), None, swapped_params).data
    np.testing.assert_allclose(swapped, base[perm], atol=1e-10)


def test_assemble_places_mask_token_in_masked_slots():
    params = tiny_params(seed=10)
    plan = sample_mask(TINY.num_tokens, 0.5, seed=11)
    projected = Tensor(np.zeros((plan.kept.size, TINY.dec_dim)))
    out = assemble_decoder_input(projected, plan, params).data
    pos = params.dec_pos.data
    token = params.mask_token.data
    np.testing.assert_array_equal(out[plan.masked], token[None, :] + pos[plan.masked])
    np.testing.assert_array_equal(out[plan.kept], pos[plan.kept])


def test_assemble_validates_row_count():
    params = tiny_params()
    plan = sample_mask(TINY.num_tokens, 0.5, seed=0)
    with pytest.raises(ValueError, match="keeps"):
        assemble_decoder_input(Tensor(np.zeros((3, TINY.dec_dim))), plan, params)
    with pytest.raises(ValueError, match="expected"):
        assemble_decoder_input(Tensor(np.zeros((2, TINY.dec_dim))), None, params)


def test_encode_validates_token_shape():
    params = tiny_params()
    with pytest.raises(ValueError, match="do not match"):
        encode(Tensor(np.zeros((3, TINY.token_dim))), None, params)


def test_encode_rejects_plan_keeping_nothing():
    params = tiny_params()
    plan = sample_mask(TINY.num_tokens, 1.0, seed=0)
    with pytest.raises(ValueError, match="keeps no tokens"):
        encode(tiny_tokens(), plan, params)


def test_fusion_rejects_masked_stream():
    params = tiny_params()
    plan = sample_mask(TINY.num_tokens, 0.75, seed=1)
    dec_in = Tensor(np.zeros((TINY.num_tokens, TINY.dec_dim)))
    raw = Tensor(np.zeros((TINY.num_tokens, TINY.pixels_per_patch)))
    with pytest.raises(ValueError, match="unmasked"):
        fuse_depth_tokens(dec_in, raw, params, plan=plan)
    out = fuse_depth_tokens(dec_in, raw, params, plan=full_plan(TINY.num_tokens))
    assert out.shape == (TINY.num_tokens, TINY.dec_dim)


def test_fusion_is_a_residual_connection():
    params = tiny_params(seed=12)
    rng = np.random.default_rng(13)
    dec_in = Tensor(rng.standard_normal((TINY.num_tokens, TINY.dec_dim)))
    raw = Tensor(rng.standard_normal((TINY.num_tokens, TINY.pixels_per_patch)))
    out = fuse_depth_tokens(dec_in, raw, params)
    embedded = raw.data @ params.fusion_w.data + params.fusion_b.data
    np.testing.assert_allclose(out.data, dec_in.data + embedded, atol=1e-12)


def test_forward_pretrain_returns_meters_at_image_shape():
    params = tiny_params()
    plan = sample_mask(TINY.num_tokens, 0.75, seed=2)
    pred = forward_pretrain(tiny_sample(), plan, params)
    assert pred.shape == (8, 8)
    assert pred.dtype == np.float64


def test_forward_pretrain_requires_ground_truth():
    params = tiny_params()
    sample = tiny_sample()
    no_gt = RgbdSample(sample.identifier, sample.rgb, sample.raw_depth, None)
    with pytest.raises(ValueError, match="ground-truth"):
        forward_pretrain(no_gt, None, params)


def test_forward_finetune_is_deterministic():
    params = tiny_params(seed=14)
    sample = tiny_sample(seed=15)
    a = forward_finetune(sample, params).data
    b = forward_finetune(sample, params).data
    np.testing.assert_array_equal(a, b)


def test_one_patch_perturbation_reaches_every_output_patch():
    params = tiny_params(seed=16)
    sample = tiny_sample(seed=17)
    raw2 = sample.raw_depth.values.copy()
    raw2[0:4, 0:4] += 0.75  # patch 0 only
    bumped = RgbdSample(sample.identifier, sample.rgb, DepthImage(raw2), sample.gt_depth)
    diff = np.abs(forward_finetune(bumped, params).data - forward_finetune(sample, params).data)
    per_patch = patchify(Tensor(diff[None]), TINY.grid).data.max(axis=1)
    assert (per_patch > 0).all(), "attention should spread one patch everywhere"


def test_pretrain_gradients_reach_the_right_parameters():
    params = tiny_params(seed=18)
    plan = sample_mask(TINY.num_tokens, 0.75, seed=19)
    pred = forward_pretrain(tiny_sample(seed=20), plan, params)
    pred.sum().backward()
    named = {k: t.grad for k, t in params.named().items()}
    assert named["patch_embed.w"] is not None
    assert named["mask_token"] is not None
    assert named["head.w"] is not None
    assert named["enc.0.attn.wq"] is not None
    assert named["fusion.w"] is None  # fusion plays no role before fine-tuning


def test_finetune_gradients_reach_the_fusion_embed():
    params = tiny_params(seed=21)
    pred = forward_finetune(tiny_sample(seed=22), params)
    pred.sum().backward()
    named = {k: t.grad for k, t in params.named().items()}
    assert named["fusion.w"] is not None
    assert named["mask_token"] is None  # nothing is masked in this stage


def test_init_is_seed_deterministic():
    a = init_params(TINY, seed=5, dtype=np.float64)
    b = init_params(TINY, seed=5, dtype=np.float64)
    c = init_params(TINY, seed=6, dtype=np.float64)
    for (ka, ta), (kb, tb) in zip(a.named().items(), b.named().items()):
        assert ka == kb
        np.testing.assert_array_equal(ta.data, tb.data)
    assert any(
        not np.array_equal(ta.data, tc.data)
        for ta, tc in zip(a.named().values(), c.named().values())
    )


def test_init_statistics():
    from depthfill.model import WEIGHT_STD

    config = ModelConfig(image_size=8, patch_size=4, enc_layers=1, enc_heads=4,
                         enc_dim=128, dec_layers=1, dec_heads=4, dec_dim=64)
    params = init_params(config, seed=0)
    std = params.enc_blocks[0].mlp_w1.data.std()
    assert 0.8 * WEIGHT_STD < std < 1.2 * WEIGHT_STD
    assert np.all(params.patch_embed_b.data == 0)
    assert np.all(params.enc_blocks[0].ln1_g.data == 1)
    assert np.all(params.enc_norm_g.data == 1)
    assert np.all(params.dec_norm_b.data == 0)


def test_named_parameters_are_stable_and_complete():
    params = tiny_params()
    names = list(params.named())
    assert names[0] == "patch_embed.w"
    assert "enc.0.mlp.w2" in names and "dec.0.ln2.b" in names
    assert "enc_norm.g" in names and "dec_norm.b" in names
    assert names[-1] == "fusion.b"
    assert len(names) == len(set(names))
    # 3 embeds + 4 standalone linear pairs + 2 final norm pairs + blocks
    assert len(names) == 12 + 3 + 16 * (TINY.enc_layers + TINY.dec_layers)
