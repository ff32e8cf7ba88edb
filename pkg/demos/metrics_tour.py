"""What each evaluation metric measures, on hand-built depth pairs.

No training involved: constructs prediction/ground-truth pairs whose
scores are easy to reason about, and shows the conventions every metric
shares (zero depth means "not measured" and never contributes).

    python3 demos/metrics_tour.py
"""

import numpy as np

from depthfill.metrics import delta_ratio, mean_error, rmse, score_pair, ssim

rng = np.random.default_rng(0)
gt = rng.uniform(1.0, 4.0, (16, 16))

# a prediction that is exactly 10% too deep everywhere
pred = gt * 1.10
print("uniform +10% prediction:")
print(f"  rmse        {rmse(pred, gt):.4f} m  (10% of the mean depth)")
print(f"  mean error  {mean_error(pred, gt):.4f} m")
print(f"  delta 1.25  {delta_ratio(pred, gt, 1.25):.2f}   (every ratio is 1.10 < 1.25)")
print(f"  delta 1.05  {delta_ratio(pred, gt, 1.05):.2f}   (every ratio misses 1.05)")

# ssim is 1.0 only on an exact match and drops with structural damage
noisy = gt + rng.normal(0.0, 0.5, gt.shape)
print("\nstructural similarity:")
print(f"  ssim(gt, gt)     {ssim(gt, gt):.4f}")
print(f"  ssim(noisy, gt)  {ssim(noisy, gt):.4f}")

# zero ground truth marks unmeasured pixels; they never count
holey = gt.copy()
holey[:8, :] = 0.0
wild = pred.copy()
wild[:8, :] = 99.0  # absurd predictions where nothing was measured
print("\nholes are ignored:")
print(f"  rmse(pred, holey)  {rmse(pred, holey):.4f} m")
print(f"  rmse(wild, holey)  {rmse(wild, holey):.4f} m  (identical despite wild values)")

# score_pair bundles every column of the evaluation report
row = score_pair("demo", pred, gt)
print("\nreport row:", {k: None if v is None else round(v, 4)
                        for k, v in row.metric_values().items()})

# below the 11x11 ssim window the other metrics still work; ssim is
# reported as missing rather than guessed
small = score_pair("tiny", pred[:8, :8], gt[:8, :8])
print("8x8 row:     ", {k: None if v is None else round(v, 4)
                        for k, v in small.metric_values().items()})
