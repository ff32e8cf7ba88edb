"""Command-line front end.

Verbs: pretrain, finetune, complete, evaluate, make-synthetic.  Exit
codes: 0 on success, 1 when inputs fail validation (bad config keys,
missing files, malformed manifests; the message names the offender),
2 when a run dies at runtime.

A config file is flat ``key = value`` text with ``#`` comments.  Keys
address every model and training field by prefix, for example::

    model.image_size = 32
    model.patch_size = 4
    train.epochs = 50
    train.seed = 7

Heavy imports happen inside the verb handlers so that --threads can pin
the BLAS thread pools before NumPy first loads.
"""

from __future__ import annotations

import argparse
import os
import sys

_THREAD_VARS = (
    "OPENBLAS_NUM_THREADS",
    "OMP_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; bad arguments are validation here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"error: {message}\n")


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Flat ``key = value`` lines; '#' starts a comment; blanks ignored."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"{source}:{lineno}: empty key")
        if key in values:
            raise ValueError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = raw.strip()
    return values


def _parse_scalar(raw: str, annotation, key: str):
    import types
    import typing

    target = annotation
    if isinstance(annotation, types.UnionType):
        members = [a for a in typing.get_args(annotation) if a is not type(None)]
        if raw.lower() in ("none", ""):
            return None
        target = members[0]
    try:
        if target is bool:
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if target is int:
            return int(raw)
        if target is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ValueError(f"config key {key!r}: {exc}") from exc


def build_configs(values: dict[str, str], stage: str, seed_override: int | None):
    """Turn flat config text into (ModelConfig, TrainConfig).

    Unknown keys are errors naming the key.  The training stage comes
    from the verb; a train.stage key must agree with it.
    """
    import typing

    from depthfill.model import ModelConfig
    from depthfill.training import TrainConfig

    model_hints = typing.get_type_hints(ModelConfig)
    train_hints = typing.get_type_hints(TrainConfig)
    model_kwargs = {}
    train_kwargs = {}
    for key, raw in values.items():
        if key.startswith("model."):
            name = key[len("model."):]
            if name not in model_hints:
                raise ValueError(f"unknown config key {key!r}")
            model_kwargs[name] = _parse_scalar(raw, model_hints[name], key)
        elif key.startswith("train."):
            name = key[len("train."):]
            if name not in train_hints:
                raise ValueError(f"unknown config key {key!r}")
            if name == "stage" and raw != stage:
                raise ValueError(f"config key 'train.stage' says {raw!r} but the verb is {stage!r}")
            if name != "stage":
                train_kwargs[name] = _parse_scalar(raw, train_hints[name], key)
        else:
            raise ValueError(f"unknown config key {key!r} (expected a model. or train. prefix)")
    if seed_override is not None:
        train_kwargs["seed"] = seed_override
    return ModelConfig(**model_kwargs), TrainConfig(stage=stage, **train_kwargs)


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def write_config_snapshot(model_config, train_config, path: str) -> None:
    """Echo the effective configuration; feeding it back reproduces the run."""
    import dataclasses

    lines = ["# effective configuration"]
    for f in dataclasses.fields(model_config):
        lines.append(f"model.{f.name} = {_format_value(getattr(model_config, f.name))}")
    for f in dataclasses.fields(train_config):
        if f.name == "stage":
            continue
        lines.append(f"train.{f.name} = {_format_value(getattr(train_config, f.name))}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _load_config_file(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), source=path)


def _train_common(args, stage: str):
    from depthfill.imaging import read_manifest

    values = _load_config_file(args.config)
    model_config, train_config = build_configs(values, stage, args.seed)
    manifest = read_manifest(args.manifest)
    os.makedirs(args.out_dir, exist_ok=True)
    write_config_snapshot(model_config, train_config,
                          os.path.join(args.out_dir, "config.txt"))
    return manifest, model_config, train_config


def cmd_pretrain(args) -> int:
    from depthfill.training import run_pretrain

    manifest, model_config, train_config = _train_common(args, "pretrain")
    result = run_pretrain(manifest, model_config, train_config, args.out_dir)
    print(f"final checkpoint: {result.checkpoint_path}")
    print(f"final mean loss: {result.final_loss:.6f} m "
          f"({result.skipped_samples} samples skipped)")
    return 0


def cmd_finetune(args) -> int:
    from depthfill.training import run_finetune

    manifest, model_config, train_config = _train_common(args, "finetune")
    result = run_finetune(manifest, train_config, args.out_dir,
                          model_config=model_config,
                          init_checkpoint=args.init_checkpoint)
    if args.init_checkpoint:
        print(f"warm start adopted {len(result.adopted_tensors)} tensors "
              f"from {args.init_checkpoint}")
    print(f"final checkpoint: {result.checkpoint_path}")
    print(f"final mean loss: {result.final_loss:.6f} m")
    return 0


def cmd_complete(args) -> int:
    from depthfill.checkpoint import load_checkpoint
    from depthfill.fusion import complete, fuse
    from depthfill.imaging import load_sample, read_manifest, save_depth

    manifest = read_manifest(args.manifest)
    ckpt = load_checkpoint(args.checkpoint)
    out_dir = os.path.join(args.out_dir, "completed")
    os.makedirs(out_dir, exist_ok=True)
    for entry in manifest:
        sample = load_sample(manifest, entry, args.depth_scale)
        dense = complete(sample, ckpt)
        stem = os.path.splitext(os.path.basename(entry.rgb_path))[0]
        if args.fuse:
            dense = fuse(sample.raw_depth, dense)
            out_path = os.path.join(out_dir, f"{stem}_fused.png")
        else:
            out_path = os.path.join(out_dir, f"{stem}_completed.png")
        save_depth(dense, out_path, args.depth_scale)
        print(f"{entry.identifier}: {sample.raw_depth.hole_count} holes -> "
              f"{dense.hole_count}, wrote {out_path}")
    return 0


def cmd_evaluate(args) -> int:
    from depthfill.imaging import read_manifest
    from depthfill.metrics import evaluate

    manifest = read_manifest(args.manifest)
    os.makedirs(args.out_dir, exist_ok=True)
    report_path = os.path.join(args.out_dir, "report.tsv")
    report = evaluate(manifest, args.checkpoint, depth_scale=args.depth_scale,
                      report_path=report_path)
    summary = ", ".join(
        f"{key}={'-' if value is None else f'{value:.4f}'}"
        for key, value in report.aggregate.items()
    )
    print(f"aggregate over {len(report.rows)} images: {summary}")
    print(f"report: {report_path}")
    return 0


def cmd_make_synthetic(args) -> int:
    from depthfill.synthetic import make_synthetic

    seed = 0 if args.seed is None else args.seed
    manifest_path = make_synthetic(args.out_dir, args.count, seed,
                                   height=args.height, width=args.width,
                                   depth_scale=args.depth_scale)
    print(f"wrote {args.count} scenes, manifest: {manifest_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="depthfill",
                     description="Masked-autoencoder depth completion")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="override the training seed")
    common.add_argument("--threads", type=int,
                        help="pin BLAS/OpenMP thread pools to N threads")
    common.add_argument("--out-dir", default="run",
                        help="run directory (default: ./run)")
    common.add_argument("--depth-scale", type=float, default=4000.0,
                        help="depth file counts per meter (default 4000)")

    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("pretrain", parents=[common],
                       help="masked reconstruction pre-training")
    p.add_argument("manifest", help="tab-separated rgb/raw/gt manifest")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", parents=[common],
                       help="depth-completion fine-tuning")
    p.add_argument("manifest")
    p.add_argument("--init-checkpoint",
                   help="warm-start weights from a pre-training checkpoint")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("complete", parents=[common],
                       help="fill holes in sensor depth maps")
    p.add_argument("manifest")
    p.add_argument("--checkpoint", required=True, help="fine-tuned checkpoint")
    p.add_argument("--fuse", action="store_true",
                   help="keep measured pixels, fill only the holes")
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("evaluate", parents=[common],
                       help="score a checkpoint against ground truth")
    p.add_argument("manifest")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("make-synthetic", parents=[common],
                       help="generate a procedural RGB-D corpus")
    p.add_argument("--count", "-n", type=int, required=True,
                   help="number of scenes")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.set_defaults(func=cmd_make_synthetic)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be positive", file=sys.stderr)
            return 1
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything else is a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
