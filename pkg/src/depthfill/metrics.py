"""Depth-map quality metrics and evaluation reports.

All metrics treat zero-valued ground-truth pixels as unmeasured: they are
excluded from RMSE/ME/delta, and SSIM zeroes both images outside the
jointly valid support so unmeasured predictions cannot move any score.
A metric that cannot be computed (no valid pixel, or an image smaller
than the SSIM window) reports a missing value, written as ``-``.

Naming note: ``mean_error`` (the reported ME) is the mean ABSOLUTE
error in meters over valid pixels, not a signed bias.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from depthfill.checkpoint import load_checkpoint, params_from_checkpoint
from depthfill.imaging import DatasetManifest, DepthImage, load_sample, resize_sample
from depthfill.model import forward_finetune
from depthfill.tensor import no_grad

DELTA_THRESHOLDS = (1.25, 1.25 ** 2)
METRIC_COLUMNS = ("rmse_m", "me_m", "ssim",
                  f"delta_{DELTA_THRESHOLDS[0]:g}", f"delta_{DELTA_THRESHOLDS[1]:g}")
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
MISSING = "-"


def _as_array(depth) -> np.ndarray:
    arr = depth.values if isinstance(depth, DepthImage) else np.asarray(depth)
    return arr.astype(np.float64, copy=False)


def _paired(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = _as_array(pred), _as_array(gt)
    if p.shape != g.shape:
        raise ValueError(f"prediction {p.shape} does not match gt {g.shape}")
    return p, g


def rmse(pred, gt) -> float | None:
    """Root-mean-square error in meters over pixels with gt > 0."""
    p, g = _paired(pred, gt)
    mask = g > 0
    if not mask.any():
        return None
    diff = p[mask] - g[mask]
    return float(np.sqrt(np.mean(diff * diff)))


def mean_error(pred, gt) -> float | None:
    """Mean absolute error in meters over pixels with gt > 0 (the ME column)."""
    p, g = _paired(pred, gt)
    mask = g > 0
    if not mask.any():
        return None
    return float(np.mean(np.abs(p[mask] - g[mask])))


def delta_ratio(pred, gt, threshold: float) -> float | None:
    """Fraction of valid pixels with max(pred/gt, gt/pred) < threshold.

    A prediction of zero (or below) at a measured pixel counts as a miss.
    """
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    p, g = _paired(pred, gt)
    mask = g > 0
    count = int(mask.sum())
    if count == 0:
        return None
    pv, gv = p[mask], g[mask]
    ok = pv > 0
    ratio = np.maximum(np.divide(pv, gv, out=np.full_like(pv, np.inf), where=ok),
                       np.divide(gv, pv, out=np.full_like(pv, np.inf), where=ok))
    return float(np.count_nonzero(ratio < threshold) / count)


def _ssim_window(kind: str) -> np.ndarray:
    if kind == "gaussian":
        half = (SSIM_WINDOW - 1) / 2.0
        coords = np.arange(SSIM_WINDOW, dtype=np.float64) - half
        kernel = np.exp(-(coords ** 2) / (2.0 * SSIM_SIGMA ** 2))
        window = np.outer(kernel, kernel)
        return window / window.sum()
    if kind == "uniform":
        return np.full((SSIM_WINDOW, SSIM_WINDOW), 1.0 / SSIM_WINDOW ** 2)
    raise ValueError(f"window must be 'gaussian' or 'uniform', got {kind!r}")


def ssim(pred, gt, max_depth: float = 8.0, window: str = "gaussian") -> float:
    """Single-scale SSIM on depth with an 11x11 window (sigma 1.5).

    The dynamic range is ``max_depth``; C1=(0.01*R)^2, C2=(0.03*R)^2.
    Both images are zeroed where either has no measurement, and only
    window positions fully inside the image are averaged.  Identical
    images score exactly 1.0, and the score is symmetric in its
    arguments.
    """
    a, b = _paired(pred, gt)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    support = (a > 0) & (b > 0)
    a = np.where(support, a, 0.0)
    b = np.where(support, b, 0.0)
    kernel = _ssim_window(window)
    c1 = (0.01 * max_depth) ** 2
    c2 = (0.03 * max_depth) ** 2

    def smooth(img):
        return convolve2d(img, kernel, mode="valid")

    mu_a = smooth(a)
    mu_b = smooth(b)
    var_a = smooth(a * a) - mu_a * mu_a
    var_b = smooth(b * b) - mu_b * mu_b
    cov = smooth(a * b) - mu_a * mu_b
    score = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    return float(score.mean())


@dataclass(frozen=True)
class EvalRow:
    identifier: str
    rmse_m: float | None
    me_m: float | None
    ssim: float | None
    delta_1: float | None
    delta_2: float | None
    valid_pixels: int

    def metric_values(self) -> dict[str, float | None]:
        return {
            "rmse_m": self.rmse_m,
            "me_m": self.me_m,
            "ssim": self.ssim,
            f"delta_{DELTA_THRESHOLDS[0]:g}": self.delta_1,
            f"delta_{DELTA_THRESHOLDS[1]:g}": self.delta_2,
        }


@dataclass(frozen=True)
class EvalReport:
    """Per-image scores plus the unweighted mean over scored images."""

    rows: list[EvalRow]
    aggregate: dict[str, float | None]

    @staticmethod
    def from_rows(rows: list[EvalRow]) -> "EvalReport":
        agg: dict[str, float | None] = {}
        for key in METRIC_COLUMNS:
            present = [r.metric_values()[key] for r in rows
                       if r.metric_values()[key] is not None]
            agg[key] = float(np.mean(present)) if present else None
        return EvalReport(rows=rows, aggregate=agg)


def score_pair(identifier: str, pred, gt, max_depth: float = 8.0) -> EvalRow:
    """Every metric for one image; a metric that cannot be computed (no
    valid pixel, or the image is smaller than the SSIM window) is None."""
    p, g = _paired(pred, gt)
    scorable = (g > 0).any() and min(g.shape) >= SSIM_WINDOW
    return EvalRow(
        identifier=identifier,
        rmse_m=rmse(p, g),
        me_m=mean_error(p, g),
        ssim=ssim(p, g, max_depth=max_depth) if scorable else None,
        delta_1=delta_ratio(p, g, DELTA_THRESHOLDS[0]),
        delta_2=delta_ratio(p, g, DELTA_THRESHOLDS[1]),
        valid_pixels=int((g > 0).sum()),
    )


def evaluate(manifest: DatasetManifest, checkpoint_path: str,
             depth_scale: float = 4000.0, report_path: str | None = None) -> EvalReport:
    """Score a fine-tuned checkpoint on every sample of the manifest.

    Predictions and ground truth are compared at model resolution; the
    raw network output is clamped at zero, matching inference.  Returns
    the report and optionally writes its tab-separated form.
    """
    ckpt = load_checkpoint(checkpoint_path)
    if ckpt.stage != "finetune":
        raise ValueError(f"evaluation needs a finetune checkpoint, got stage {ckpt.stage!r}")
    params = params_from_checkpoint(ckpt)
    config = ckpt.config
    rows = []
    for entry in manifest:
        sample = load_sample(manifest, entry, depth_scale)
        if sample.gt_depth is None:
            raise ValueError(f"evaluation requires ground truth, none for {entry.identifier!r}")
        sized = resize_sample(sample, config.image_size, config.image_size)
        with no_grad():
            pred = forward_finetune(sized, params).data
        pred = np.maximum(pred, 0.0)
        rows.append(score_pair(entry.identifier, pred, sized.gt_depth.values,
                               max_depth=config.max_depth))
    report = EvalReport.from_rows(rows)
    if report_path is not None:
        write_report(report, report_path)
    return report


def _fmt(value: float | None) -> str:
    return MISSING if value is None else f"{value:.6f}"


def write_report(report: EvalReport, path: str | os.PathLike) -> None:
    """Tab-separated rows, one per image, with an AGGREGATE line last."""
    metric_keys = list(report.aggregate.keys())
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("identifier\t" + "\t".join(metric_keys) + "\tvalid_pixels\n")
        for row in report.rows:
            values = row.metric_values()
            fh.write(row.identifier + "\t"
                     + "\t".join(_fmt(values[k]) for k in metric_keys)
                     + f"\t{row.valid_pixels}\n")
        total_pixels = sum(r.valid_pixels for r in report.rows)
        fh.write("AGGREGATE\t"
                 + "\t".join(_fmt(report.aggregate[k]) for k in metric_keys)
                 + f"\t{total_pixels}\n")
