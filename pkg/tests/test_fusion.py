"""The fusion contract: measured pixels pass through untouched, holes take
the network's value."""

import numpy as np
import pytest

from depthfill.checkpoint import save_checkpoint
from depthfill.fusion import complete, complete_and_fuse, fuse
from depthfill.imaging import DepthImage, RgbdSample, RgbImage, read_manifest, load_sample
from depthfill.model import ModelConfig, init_params
from depthfill.synthetic import make_synthetic

from oracles import fuse_loop

CONFIG = ModelConfig(image_size=16, patch_size=4, enc_layers=1, enc_heads=2, enc_dim=8,
                     dec_layers=1, dec_heads=2, dec_dim=8)


def random_depth(seed, shape=(10, 10), hole_p=0.4):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0.5, 7.5, shape).astype(np.float32)
    d[rng.uniform(size=shape) < hole_p] = 0.0
    return DepthImage(d)


@pytest.mark.parametrize("seed", range(20))
def test_fuse_matches_loop_oracle_exactly(seed):
    original = random_depth(seed)
    completed = random_depth(1000 + seed, hole_p=0.1)
    fused = fuse(original, completed)
    np.testing.assert_array_equal(fused.values,
                                  fuse_loop(original.values, completed.values))


def test_fuse_preserves_measured_pixels_bitwise():
    original = random_depth(3)
    completed = random_depth(4, hole_p=0.0)
    fused = fuse(original, completed)
    measured = original.values != 0
    np.testing.assert_array_equal(fused.values[measured], original.values[measured])
    np.testing.assert_array_equal(fused.values[~measured], completed.values[~measured])


def test_fuse_with_itself_is_identity():
    original = random_depth(5)
    np.testing.assert_array_equal(fuse(original, original).values, original.values)


def test_fuse_never_adds_holes():
    original = random_depth(6)
    completed = random_depth(7, hole_p=0.0)
    assert fuse(original, completed).hole_count == 0
    partial = random_depth(8, hole_p=0.5)
    assert fuse(original, partial).hole_count <= original.hole_count


def test_fuse_shape_mismatch():
    with pytest.raises(ValueError, match="does not match"):
        fuse(DepthImage(np.ones((4, 4))), DepthImage(np.ones((5, 5))))


def corpus_sample(tmp_path, size=16):
    manifest = read_manifest(make_synthetic(str(tmp_path / "d"), 1, seed=2,
                                            height=size, width=size))
    return load_sample(manifest, next(iter(manifest)))


def test_complete_needs_a_finetune_checkpoint(tmp_path):
    sample = corpus_sample(tmp_path)
    path = save_checkpoint(tmp_path / "pre.npz", init_params(CONFIG), "pretrain")
    with pytest.raises(ValueError, match="finetune"):
        complete(sample, path)


def test_complete_returns_native_resolution(tmp_path):
    sample = corpus_sample(tmp_path, size=20)  # model is 16, sample is 20
    path = save_checkpoint(tmp_path / "ft.npz", init_params(CONFIG, seed=1), "finetune")
    dense = complete(sample, path)
    assert dense.values.shape == (20, 20)
    assert (dense.values >= 0).all()


def test_complete_and_fuse_composes(tmp_path):
    sample = corpus_sample(tmp_path)
    path = save_checkpoint(tmp_path / "ft.npz", init_params(CONFIG, seed=1), "finetune")
    by_hand = fuse(sample.raw_depth, complete(sample, path))
    fused = complete_and_fuse(sample, path)
    np.testing.assert_array_equal(fused.values, by_hand.values)
    measured = sample.raw_depth.values != 0
    np.testing.assert_array_equal(fused.values[measured], sample.raw_depth.values[measured])
    assert fused.hole_count <= sample.raw_depth.hole_count


def test_complete_accepts_loaded_checkpoint_object(tmp_path):
    from depthfill.checkpoint import load_checkpoint

    sample = corpus_sample(tmp_path)
    path = save_checkpoint(tmp_path / "ft.npz", init_params(CONFIG, seed=1), "finetune")
    via_path = complete(sample, path)
    via_object = complete(sample, load_checkpoint(path))
    np.testing.assert_array_equal(via_path.values, via_object.values)
