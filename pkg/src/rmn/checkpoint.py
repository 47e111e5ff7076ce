"""Checkpoint serialization.

Layout (little-endian): magic "RMN1" | u32 version | config text block |
train-state JSON block | u32 array count | named float64 arrays | metrics
JSON block | sha256 digest. Text blocks are u32 length + UTF-8. Loading
verifies the digest before touching anything, so a corrupted file never
half-loads.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .training import MetricRow, TrainConfig, parse_config_text, format_config

MAGIC = b"RMN1"
VERSION = 1


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    arrays: dict                       # name -> float64 ndarray
    train_state: dict = field(default_factory=dict)   # seed/epochs/optimizer step
    metrics: list = field(default_factory=list)       # MetricRow records


def _w_block(buf, data: bytes):
    buf.write(struct.pack("<I", len(data)))
    buf.write(data)


def save_checkpoint(path, ckpt: Checkpoint) -> str:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    _w_block(buf, format_config(ckpt.config).encode("utf-8"))
    _w_block(buf, json.dumps(ckpt.train_state, sort_keys=True).encode("utf-8"))
    buf.write(struct.pack("<I", len(ckpt.arrays)))
    for name in ckpt.arrays:
        arr = np.array(ckpt.arrays[name], dtype="<f8", order="C", copy=True)
        _w_block(buf, name.encode("utf-8"))
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack("<" + "I" * arr.ndim, *arr.shape))
        buf.write(arr.tobytes())
    metrics = [asdict(m) if isinstance(m, MetricRow) else m for m in ckpt.metrics]
    _w_block(buf, json.dumps(metrics, sort_keys=True).encode("utf-8"))
    payload = buf.getvalue()
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(digest)
    return digest.hex()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        b = self.data[self.off:self.off + n]
        self.off += n
        return b

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def block(self) -> bytes:
        return self.take(self.u32())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 40 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: digest mismatch (corrupt or truncated)")
    r = _Reader(payload)
    r.take(4)
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    config = parse_config_text(r.block().decode("utf-8"))
    train_state = json.loads(r.block().decode("utf-8"))
    arrays = {}
    for _ in range(r.u32()):
        name = r.block().decode("utf-8")
        ndim = r.u32()
        shape = struct.unpack("<" + "I" * ndim, r.take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape)
        arrays[name] = np.array(arr, dtype=np.float64)
    metrics = [MetricRow(**m) for m in json.loads(r.block().decode("utf-8"))]
    return Checkpoint(config=config, arrays=arrays, train_state=train_state,
                      metrics=metrics)


def collect_arrays(network, optimizer=None) -> dict:
    """Named parameter values, batch-norm buffers, optional Adam moments."""
    out = {}
    for name, p in network.named_parameters().items():
        out[f"param.{name}"] = np.array(p.data, copy=True)
    for name, bn in network.named_bn_states().items():
        for k, arr in bn.state_arrays().items():
            out[f"bn.{name}.{k}"] = np.array(arr, dtype=np.float64, copy=True)
    if optimizer is not None:
        for k, arr in optimizer.m.items():
            out[f"adam.m.{k}"] = np.array(arr, copy=True)
        for k, arr in optimizer.v.items():
            out[f"adam.v.{k}"] = np.array(arr, copy=True)
    return out


def restore_arrays(network, arrays: dict, optimizer=None):
    """Write saved values back into a freshly built network (and optimizer)."""
    params = network.named_parameters()
    for name, p in params.items():
        key = f"param.{name}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint missing array {key}")
        val = arrays[key]
        if val.shape != p.shape:
            raise CheckpointError(
                f"{key}: shape {val.shape} does not match model {p.shape}")
        arr = p.data
        arr.flags.writeable = True
        arr[...] = val
        arr.flags.writeable = False
    for name, bn in network.named_bn_states().items():
        packed = {}
        for k in ("running_mean", "running_var", "batches_seen"):
            key = f"bn.{name}.{k}"
            if key not in arrays:
                raise CheckpointError(f"checkpoint missing array {key}")
            packed[k] = arrays[key]
        bn.load_state_arrays(packed)
    if optimizer is not None:
        for k in optimizer.m:
            optimizer.m[k] = np.array(arrays[f"adam.m.{k}"], copy=True)
            optimizer.v[k] = np.array(arrays[f"adam.v.{k}"], copy=True)
