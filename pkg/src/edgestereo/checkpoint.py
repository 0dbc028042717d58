"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic    8 bytes  b"EDSTCKPT"
    version  uint32
    hlen     uint32   length of the JSON header
    header   hlen bytes, UTF-8 JSON: {"manifest": [[name, shape], ...], "meta": {...}}
    payload  float32 little-endian tensors, concatenated in manifest order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"EDSTCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _tensors(model, optimizer) -> list[tuple[str, np.ndarray]]:
    items = [(f"param/{n}", p.value) for n, p in model.named_parameters()]
    if optimizer is not None:
        items += [(f"adam_m/{n}", m) for n, m in zip(optimizer.names, optimizer.m)]
        items += [(f"adam_v/{n}", v) for n, v in zip(optimizer.names, optimizer.v)]
    return items


def save_checkpoint(path, model, optimizer=None, meta: dict | None = None) -> Path:
    items = _tensors(model, optimizer)
    meta = dict(meta or {})
    if optimizer is not None:
        meta["adam_step"] = optimizer.step_count
    header = json.dumps({"manifest": [[n, list(a.shape)] for n, a in items], "meta": meta},
                        sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(header)) + header)
        for _, a in items:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return path


def read_checkpoint(path) -> tuple[dict, list[tuple[str, np.ndarray]]]:
    """Raw header and tensors, without binding to a model."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path} is not an EdgeStereo checkpoint")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    offset = 16 + hlen
    tensors = []
    for name, shape in header["manifest"]:
        n = int(np.prod(shape, dtype=np.int64))
        chunk = data[offset:offset + 4 * n]
        if len(chunk) != 4 * n:
            raise CheckpointError(f"truncated payload at {name}")
        tensors.append((name, np.frombuffer(chunk, dtype="<f4").reshape(shape)))
        offset += 4 * n
    return header, tensors


def load_checkpoint(path, model, optimizer=None) -> dict:
    """Restore parameters (and optimizer moments) in place; returns the metadata."""
    header, tensors = read_checkpoint(path)
    stored = dict(tensors)
    expected = [(n, a.shape) for n, a in _tensors(model, optimizer)]
    for name, shape in expected:
        if name not in stored:
            raise CheckpointError(f"checkpoint manifest lacks {name}")
        if tuple(stored[name].shape) != tuple(shape):
            raise CheckpointError(f"shape mismatch for {name}: checkpoint "
                                  f"{tuple(stored[name].shape)}, model {tuple(shape)}")
    n_params = sum(1 for n in stored if n.startswith("param/"))
    if n_params != len(list(model.named_parameters())):
        raise CheckpointError("checkpoint and model have different parameter sets")
    for name, p in model.named_parameters():
        p.value = stored[f"param/{name}"].astype(p.value.dtype)
    if optimizer is not None:
        optimizer.m = [stored[f"adam_m/{n}"].astype(m.dtype) for n, m in zip(optimizer.names, optimizer.m)]
        optimizer.v = [stored[f"adam_v/{n}"].astype(v.dtype) for n, v in zip(optimizer.names, optimizer.v)]
        optimizer.step_count = int(header["meta"].get("adam_step", 0))
    return header["meta"]
