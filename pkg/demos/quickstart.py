"""End-to-end walkthrough: synthesize scenes, pre-train, fine-tune, evaluate.

Runs the full two-stage pipeline on a pocket-sized model (16x16 scenes,
two transformer layers) in well under a minute.  Every step here has a
CLI equivalent, shown in the comments, so the same flow works from a
shell.

    python3 demos/quickstart.py
"""

import tempfile
from pathlib import Path

from depthfill.imaging import read_manifest
from depthfill.metrics import evaluate
from depthfill.model import ModelConfig
from depthfill.synthetic import make_synthetic
from depthfill.training import TrainConfig, run_finetune, run_pretrain

CONFIG = ModelConfig(image_size=16, patch_size=4, enc_layers=2, enc_heads=2, enc_dim=16,
                     dec_layers=1, dec_heads=2, dec_dim=16)

with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp)

    # 1. Synthesize a tiny RGB-D corpus: dense ground truth plus a raw
    #    depth copy with sensor-style holes punched into it.
    #    CLI: depthfill make-synthetic -n 8 --height 16 --width 16 --out-dir data
    train = read_manifest(make_synthetic(root / "train", count=8, seed=0, height=16, width=16))
    holdout = read_manifest(make_synthetic(root / "hold", count=4, seed=9, height=16, width=16))
    print(f"synthesized {len(train)} training scenes and {len(holdout)} held-out scenes")

    # 2. Stage one: mask 75% of the patches and learn to reconstruct the
    #    hidden depth from what remains.
    #    CLI: depthfill pretrain --config model.cfg --out-dir pre
    pre = run_pretrain(train, CONFIG,
                       TrainConfig("pretrain", epochs=150, learning_rate=5e-3, weight_decay=0.0),
                       root / "pre")
    print(f"pre-train: {len(pre.epoch_losses)} epochs, "
          f"masked RMSE {pre.epoch_losses[0]:.3f} -> {pre.final_loss:.3f} m")

    # 3. Stage two: drop the masking, feed raw depth as a fourth channel,
    #    fuse its tokens into the decoder, and train against full frames.
    #    CLI: depthfill finetune --config model.cfg --init-checkpoint pre/checkpoints/final.npz
    fine = run_finetune(train,
                        TrainConfig("finetune", epochs=150, learning_rate=5e-3, weight_decay=0.0),
                        root / "fine", init_checkpoint=pre.checkpoint_path)
    print(f"fine-tune: adopted {len(fine.adopted_tensors)} tensors from stage one, "
          f"RMSE {fine.epoch_losses[0]:.3f} -> {fine.final_loss:.3f} m")

    # 4. Score the held-out scenes and write the tab-separated report.
    #    CLI: depthfill evaluate --checkpoint fine/checkpoints/final.npz --manifest hold/manifest.tsv
    report = evaluate(holdout, fine.checkpoint_path, report_path=root / "report.tsv")
    print("\nheld-out aggregate:")
    for name, value in report.aggregate.items():
        print(f"  {name:>12}: {value:.3f}" if value is not None else f"  {name:>12}: -")
    print("\nreport file:")
    print((root / "report.tsv").read_text())
