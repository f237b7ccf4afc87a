"""Self-describing binary checkpoints.

Layout: magic b"FCKP" | version u32 | header_len u64 | header JSON (utf-8) |
raw tensor payload. The header echoes the full run configuration, the step
counter, the best validation mAP, RNG state, and a tensor index
(name/shape/offset into the payload). Tensors are float32 little-endian,
so a save/load round trip restores training exactly. Optimizer first/second
moments are stored under "opt.m." / "opt.v." name prefixes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

MAGIC = b"FCKP"
VERSION = 1


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    variant: str
    model_config: dict
    train_config: dict
    step: int
    epoch: int
    best_val_map: float
    metrics: dict
    class_names: list[str]
    tensors: dict[str, np.ndarray]
    rng: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def save_checkpoint(ck: Checkpoint, path: str | Path) -> None:
    index = []
    blobs = []
    offset = 0
    for name, t in ck.tensors.items():
        arr = np.ascontiguousarray(t, dtype="<f4")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    header = {
        "variant": ck.variant,
        "model_config": ck.model_config,
        "train_config": ck.train_config,
        "step": ck.step,
        "epoch": ck.epoch,
        "best_val_map": ck.best_val_map,
        "metrics": ck.metrics,
        "class_names": ck.class_names,
        "rng": ck.rng,
        "extra": ck.extra,
        "tensors": index,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(hbytes)))
        f.write(hbytes)
        for b in blobs:
            f.write(b)


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise CheckpointError(f"{path}: too short for a checkpoint header")
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: version {version}, supported {VERSION}")
    (hlen,) = struct.unpack_from("<Q", raw, 8)
    if len(raw) < 16 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: bad header: {e}") from e
    payload = raw[16 + hlen :]
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        off = int(entry["offset"])
        if len(payload) < off + 4 * n:
            raise CheckpointError(f"{path}: truncated payload for tensor {entry['name']}")
        tensors[entry["name"]] = (
            np.frombuffer(payload, dtype="<f4", count=n, offset=off).reshape(shape).copy()
        )
    return Checkpoint(
        variant=header["variant"],
        model_config=header["model_config"],
        train_config=header["train_config"],
        step=int(header["step"]),
        epoch=int(header["epoch"]),
        best_val_map=float(header["best_val_map"]),
        metrics=header["metrics"],
        class_names=list(header["class_names"]),
        tensors=tensors,
        rng=header.get("rng", {}),
        extra=header.get("extra", {}),
    )


def state_dict_to_tensors(model: torch.nn.Module) -> dict[str, np.ndarray]:
    return {name: p.detach().cpu().numpy() for name, p in model.state_dict().items()}


def load_state_into(model: torch.nn.Module, tensors: dict[str, np.ndarray], prefix: str = "") -> None:
    state = {}
    for name, _ in model.state_dict().items():
        key = prefix + name
        if key not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {key}")
        state[name] = torch.from_numpy(tensors[key].copy())
    model.load_state_dict(state)
