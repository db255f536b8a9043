"""Versioned binary checkpoints.

Layout::

    b"HSUMCKPT"                 magic (8 bytes)
    uint32 little-endian        format version
    uint64 little-endian        manifest length in bytes
    manifest                    UTF-8 JSON, sorted keys
    payload                     every tensor as float64 little-endian, C order,
                                in manifest order

The manifest echoes the model config, lists each tensor's name, shape and
byte offset, and carries the optimizer step, RNG description, step counter
and any trainer state.  Saving the same content twice gives identical bytes.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .encoder import ModelConfig, Params, param_shapes
from .optim import AdamState
from .tensor import Tensor

MAGIC = b"HSUMCKPT"
FORMAT_VERSION = 1
_LE_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: Params
    adam: AdamState = field(default_factory=AdamState)
    rng: dict = field(default_factory=dict)
    step: int = 0
    extra: dict = field(default_factory=dict)


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    arrays: list[tuple[str, np.ndarray]] = [(f"param/{k}", ckpt.params[k].data) for k in sorted(ckpt.params)]
    arrays += [(f"adam.m/{k}", ckpt.adam.m[k]) for k in sorted(ckpt.adam.m)]
    arrays += [(f"adam.v/{k}", ckpt.adam.v[k]) for k in sorted(ckpt.adam.v)]
    entries, offset = [], 0
    for name, arr in arrays:
        nbytes = arr.size * 8
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    manifest = _dumps({
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "tensors": entries,
        "optimizer": {"step": ckpt.adam.step},
        "rng": ckpt.rng,
        "step": ckpt.step,
        "extra": ckpt.extra,
    })
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(manifest)))
        fh.write(manifest)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype=_LE_F64).tobytes())
    tmp.replace(path)


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> Checkpoint:
    """Read a checkpoint; raise ``CheckpointError`` if it is malformed or its config differs."""
    blob = Path(path).read_bytes()
    if len(blob) < 20 or blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, mlen = struct.unpack("<IQ", blob[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    try:
        manifest = json.loads(blob[20:20 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest") from exc
    base = 20 + mlen
    try:
        config = ModelConfig(**manifest["config"])
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad model config: {exc}") from exc
    if expected_config is not None and config != expected_config:
        raise CheckpointError(f"{path}: checkpoint config {config} does not match {expected_config}")
    params: Params = {}
    adam = AdamState(step=manifest["optimizer"]["step"])
    for entry in manifest["tensors"]:
        start = base + entry["offset"]
        raw = blob[start:start + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {entry['name']}")
        arr = np.frombuffer(raw, dtype=_LE_F64).astype(np.float64).reshape(entry["shape"])
        kind, name = entry["name"].split("/", 1)
        if kind == "param":
            params[name] = Tensor(arr, requires_grad=True, name=name)
        elif kind == "adam.m":
            adam.m[name] = arr
        elif kind == "adam.v":
            adam.v[name] = arr
    want = param_shapes(config)
    got = {k: v.shape for k, v in params.items()}
    if got != want:
        raise CheckpointError(f"{path}: parameter shapes do not match the model config")
    return Checkpoint(config, params, adam, manifest["rng"], manifest["step"], manifest["extra"])


def params_equal(a: Mapping[str, Tensor], b: Mapping[str, Tensor]) -> bool:
    return a.keys() == b.keys() and all(np.array_equal(a[k].data, b[k].data) for k in a)
