"""Self-describing checkpoint files.

A checkpoint is a NumPy ``.npz`` archive.  Every parameter and optimizer
array is stored as its own ``.npy`` member, whose header already
declares shape, scalar width, and byte order; a ``__meta__`` member
carries a JSON document with the format tag, stage ({pretrain,
finetune}), the full model configuration including ``max_depth``, and
any training counters.  A file can therefore be rebuilt into a model
without any outside knowledge.
"""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass

import numpy as np

from depthfill.model import ModelConfig, ModelParams, init_params

FORMAT_NAME = "depthfill-checkpoint"
FORMAT_VERSION = 1
STAGES = ("pretrain", "finetune")

_PARAM_PREFIX = "param."
_STATE_PREFIX = "state."


@dataclass
class Checkpoint:
    config: ModelConfig
    stage: str
    params: dict[str, np.ndarray]
    state: dict[str, np.ndarray]
    meta: dict


def save_checkpoint(path, params: ModelParams, stage: str,
                    state: dict[str, np.ndarray] | None = None,
                    extra_meta: dict | None = None) -> str:
    """Write the archive and return its real path (``.npz`` enforced)."""
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}, got {stage!r}")
    path = str(path)
    if not path.endswith(".npz"):
        path += ".npz"
    meta = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "stage": stage,
        "max_depth": params.config.max_depth,
        "dtype": np.dtype(params.dtype).name,
        "byte_order": sys.byteorder,
        "config": asdict(params.config),
    }
    if extra_meta:
        meta.update(extra_meta)
    members = {"__meta__": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
    for name, tensor in params.named().items():
        members[_PARAM_PREFIX + name] = tensor.data
    for name, arr in (state or {}).items():
        members[_STATE_PREFIX + name] = np.asarray(arr)
    np.savez(path, **members)
    return path


def load_checkpoint(path) -> Checkpoint:
    with np.load(path) as archive:
        if "__meta__" not in archive:
            raise ValueError(f"{path} is not a checkpoint: missing __meta__ member")
        meta = json.loads(bytes(archive["__meta__"]).decode("utf-8"))
        if meta.get("format") != FORMAT_NAME:
            raise ValueError(f"{path} is not a checkpoint: format {meta.get('format')!r}")
        if meta.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
        stage = meta.get("stage")
        if stage not in STAGES:
            raise ValueError(f"{path}: unknown stage {stage!r}")
        params = {}
        state = {}
        for key in archive.files:
            if key.startswith(_PARAM_PREFIX):
                params[key[len(_PARAM_PREFIX):]] = archive[key]
            elif key.startswith(_STATE_PREFIX):
                state[key[len(_STATE_PREFIX):]] = archive[key]
    config = ModelConfig(**meta["config"])
    return Checkpoint(config=config, stage=stage, params=params, state=state, meta=meta)


def load_into(params: ModelParams, arrays: dict[str, np.ndarray],
              strict: bool = True) -> tuple[list[str], list[str]]:
    """Copy checkpoint arrays into matching parameters.

    Strict mode (resume) demands a perfect one-to-one match and raises on
    any missing, extra, or misshapen tensor.  Loose mode (warm start)
    takes what fits and reports (adopted, left_fresh) name lists.
    """
    named = params.named()
    adopted: list[str] = []
    fresh: list[str] = []
    for name, tensor in named.items():
        arr = arrays.get(name)
        if arr is None:
            if strict:
                raise ValueError(f"checkpoint is missing tensor {name!r}")
            fresh.append(name)
            continue
        if arr.shape != tensor.shape:
            if strict:
                raise ValueError(
                    f"checkpoint tensor {name!r} has shape {arr.shape}, "
                    f"model expects {tensor.shape}"
                )
            fresh.append(name)
            continue
        tensor.data = arr.astype(tensor.dtype, copy=False)
        adopted.append(name)
    extra = sorted(set(arrays) - set(named))
    if extra and strict:
        raise ValueError(f"checkpoint holds unknown tensors: {extra}")
    return adopted, fresh


def params_from_checkpoint(ckpt: Checkpoint) -> ModelParams:
    """Rebuild trainable parameters exactly as stored (dtype included)."""
    dtype = np.dtype(ckpt.meta.get("dtype", "float32"))
    params = init_params(ckpt.config, seed=0, dtype=dtype)
    load_into(params, ckpt.params, strict=True)
    return params
