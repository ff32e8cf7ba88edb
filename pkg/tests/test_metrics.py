"""Metric values against loop oracles plus the structural properties the
report format promises."""

import numpy as np
import pytest

from depthfill.metrics import (
    DELTA_THRESHOLDS,
    METRIC_COLUMNS,
    EvalReport,
    delta_ratio,
    mean_error,
    rmse,
    score_pair,
    ssim,
    write_report,
)

from oracles import delta_loop, mean_abs_error_loop, rmse_loop, ssim_uniform_constant


def random_pair(seed, shape=(12, 12), hole_p=0.3, zero_pred_p=0.1):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0.5, 7.5, shape)
    gt[rng.uniform(size=shape) < hole_p] = 0.0
    pred = rng.uniform(0.5, 7.5, shape)
    pred[rng.uniform(size=shape) < zero_pred_p] = 0.0
    return pred, gt


# --------------------------------------------------------- point metrics

@pytest.mark.parametrize("seed", range(10))
def test_rmse_and_me_match_loop_oracles(seed):
    pred, gt = random_pair(seed)
    assert rmse(pred, gt) == pytest.approx(rmse_loop(pred, gt), rel=1e-12)
    assert mean_error(pred, gt) == pytest.approx(mean_abs_error_loop(pred, gt), rel=1e-12)


def test_rmse_worked_example():
    gt = np.array([[2.0, 0.0], [0.0, 0.0]])
    pred = np.array([[1.0, 9.0], [9.0, 9.0]])
    assert rmse(pred, gt) == pytest.approx(1.0)
    assert mean_error(pred, gt) == pytest.approx(1.0)


def test_rmse_dominates_mean_error():
    for seed in range(10):
        pred, gt = random_pair(100 + seed)
        assert rmse(pred, gt) >= mean_error(pred, gt) - 1e-12


def test_empty_gt_scores_nothing():
    gt = np.zeros((4, 4))
    pred = np.ones((4, 4))
    assert rmse(pred, gt) is None
    assert mean_error(pred, gt) is None
    assert delta_ratio(pred, gt, 1.25) is None


def test_metrics_ignore_prediction_at_holes():
    pred, gt = random_pair(7)
    wild = pred.copy()
    wild[gt == 0.0] = 1e6
    assert rmse(wild, gt) == rmse(pred, gt)
    assert mean_error(wild, gt) == mean_error(pred, gt)
    assert delta_ratio(wild, gt, 1.25) == delta_ratio(pred, gt, 1.25)


def test_shape_mismatch_is_an_error():
    with pytest.raises(ValueError, match="does not match"):
        rmse(np.ones((2, 2)), np.ones((3, 3)))


@pytest.mark.parametrize("seed", range(10))
def test_delta_matches_loop_oracle(seed):
    pred, gt = random_pair(seed, zero_pred_p=0.2)
    for t in DELTA_THRESHOLDS:
        assert delta_ratio(pred, gt, t) == pytest.approx(delta_loop(pred, gt, t), abs=1e-12)


def test_delta_properties():
    pred, gt = random_pair(11)
    valid = gt > 0
    # perfect prediction scores 1 at any threshold above 1
    assert delta_ratio(gt, gt, 1.25) == 1.0
    # scale invariance: depth in different units gives the same ratio
    for c in (0.5, 3.0):
        assert delta_ratio(c * pred, c * gt, 1.25) == delta_ratio(pred, gt, 1.25)
    # the looser threshold can only admit more pixels
    assert delta_ratio(pred, gt, DELTA_THRESHOLDS[0]) <= delta_ratio(pred, gt, DELTA_THRESHOLDS[1])
    # a zero prediction at a measured pixel is always a miss
    one_zero = gt.copy().astype(float)
    rows, cols = np.nonzero(valid)
    one_zero[rows[0], cols[0]] = 0.0
    assert delta_ratio(one_zero, gt, 1e9) == pytest.approx(1.0 - 1.0 / valid.sum())
    with pytest.raises(ValueError, match="positive"):
        delta_ratio(pred, gt, 0.0)


# ------------------------------------------------------------------ ssim

def test_ssim_of_identical_images_is_exactly_one():
    rng = np.random.default_rng(0)
    img = rng.uniform(0.1, 8.0, (16, 16))
    img[rng.uniform(size=(16, 16)) < 0.2] = 0.0
    assert ssim(img, img) == 1.0
    assert ssim(img, img, window="uniform") == 1.0


def test_ssim_is_symmetric():
    pred, gt = random_pair(13, shape=(16, 16))
    assert ssim(pred, gt) == ssim(gt, pred)


def test_ssim_constant_images_match_closed_form():
    a = np.full((11, 11), 1.5)
    b = np.full((11, 11), 2.0)
    want = ssim_uniform_constant(1.5, 2.0, max_depth=8.0)
    assert ssim(a, b, max_depth=8.0, window="uniform") == pytest.approx(want, rel=1e-12)


def test_ssim_penalizes_structure_loss():
    rng = np.random.default_rng(14)
    img = rng.uniform(1.0, 7.0, (24, 24))
    flipped = 8.0 - img  # anti-correlated structure
    assert ssim(img, flipped) < 0.5 < ssim(img, np.clip(img + 0.05, 0, None))


def test_ssim_ignores_prediction_outside_joint_support():
    pred, gt = random_pair(15, shape=(16, 16))
    wild = pred.copy()
    wild[gt == 0.0] = 1e3
    assert ssim(wild, gt) == ssim(pred, gt)


def test_ssim_rejects_images_below_window_size():
    with pytest.raises(ValueError, match="11x11 window"):
        ssim(np.ones((8, 8)), np.ones((8, 8)))
    with pytest.raises(ValueError, match="window"):
        ssim(np.ones((16, 16)), np.ones((16, 16)), window="triangle")


def test_ssim_window_normalization():
    from depthfill.metrics import _ssim_window

    for kind in ("gaussian", "uniform"):
        w = _ssim_window(kind)
        assert w.shape == (11, 11)
        assert w.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(w, w.T)
    g = _ssim_window("gaussian")
    assert g[5, 5] == g.max()


# ---------------------------------------------------------------- report

def test_score_pair_fills_every_column():
    pred, gt = random_pair(16, shape=(16, 16))
    row = score_pair("img0", pred, gt)
    values = row.metric_values()
    assert tuple(values) == METRIC_COLUMNS
    assert all(v is not None for v in values.values())
    assert row.valid_pixels == int((gt > 0).sum())


def test_score_pair_with_empty_gt_reports_missing():
    row = score_pair("void", np.ones((16, 16)), np.zeros((16, 16)))
    assert all(v is None for v in row.metric_values().values())
    assert row.valid_pixels == 0


def test_score_pair_below_window_size_skips_only_ssim():
    pred, gt = random_pair(20, shape=(8, 8))
    row = score_pair("small", pred, gt)
    assert row.ssim is None
    assert row.rmse_m is not None and row.delta_1 is not None


def test_aggregate_is_unweighted_and_skips_missing():
    pred_a, gt_a = random_pair(17, shape=(16, 16))
    pred_b, gt_b = random_pair(18, shape=(16, 16))
    rows = [
        score_pair("a", pred_a, gt_a),
        score_pair("b", pred_b, gt_b),
        score_pair("void", np.ones((16, 16)), np.zeros((16, 16))),
    ]
    report = EvalReport.from_rows(rows)
    want = (rows[0].rmse_m + rows[1].rmse_m) / 2
    assert report.aggregate["rmse_m"] == pytest.approx(want)


def test_empty_report_keeps_column_set():
    report = EvalReport.from_rows([])
    assert tuple(report.aggregate) == METRIC_COLUMNS
    assert all(v is None for v in report.aggregate.values())


def test_write_report_format(tmp_path):
    pred, gt = random_pair(19, shape=(16, 16))
    rows = [score_pair("a", pred, gt),
            score_pair("void", np.ones((16, 16)), np.zeros((16, 16)))]
    report = EvalReport.from_rows(rows)
    path = tmp_path / "report.tsv"
    write_report(report, path)
    lines = path.read_text().splitlines()
    assert lines[0].split("\t") == ["identifier", *METRIC_COLUMNS, "valid_pixels"]
    assert len(lines) == 4
    void = lines[2].split("\t")
    assert void[1:6] == ["-"] * 5 and void[6] == "0"
    agg = lines[-1].split("\t")
    assert agg[0] == "AGGREGATE"
    assert float(agg[1]) == pytest.approx(report.aggregate["rmse_m"], abs=1e-6)
    assert int(agg[-1]) == rows[0].valid_pixels


def test_evaluate_needs_a_finetune_checkpoint(tmp_path):
    from depthfill.checkpoint import save_checkpoint
    from depthfill.imaging import read_manifest
    from depthfill.metrics import evaluate
    from depthfill.model import ModelConfig, init_params
    from depthfill.synthetic import make_synthetic

    manifest = read_manifest(make_synthetic(str(tmp_path / "d"), 1, seed=0,
                                            height=16, width=16))
    config = ModelConfig(image_size=16, patch_size=4, enc_layers=1, enc_heads=2,
                         enc_dim=8, dec_layers=1, dec_heads=2, dec_dim=8)
    path = save_checkpoint(tmp_path / "pre.npz", init_params(config), "pretrain")
    with pytest.raises(ValueError, match="finetune"):
        evaluate(manifest, path)


def test_evaluate_scores_every_sample(tmp_path):
    from depthfill.checkpoint import save_checkpoint
    from depthfill.imaging import read_manifest
    from depthfill.metrics import evaluate
    from depthfill.model import ModelConfig, init_params
    from depthfill.synthetic import make_synthetic

    manifest = read_manifest(make_synthetic(str(tmp_path / "d"), 2, seed=1,
                                            height=16, width=16))
    config = ModelConfig(image_size=16, patch_size=4, enc_layers=1, enc_heads=2,
                         enc_dim=8, dec_layers=1, dec_heads=2, dec_dim=8)
    path = save_checkpoint(tmp_path / "ft.npz", init_params(config), "finetune")
    report = evaluate(manifest, path, report_path=str(tmp_path / "r.tsv"))
    assert len(report.rows) == 2
    assert all(report.aggregate[k] is not None for k in METRIC_COLUMNS)
    assert (tmp_path / "r.tsv").exists()
