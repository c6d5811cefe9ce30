"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic    8 bytes   b"CDPNNCK\\0"
    version  uint32    currently 1
    hlen     uint64    length of the JSON header in bytes
    header   hlen bytes UTF-8 JSON
    payload  float64 little-endian arrays, concatenated in header["arrays"] order

The header holds ``spec`` (layer list), ``input_shape``, ``epoch``,
``rng_state`` (a numpy bit-generator state, or null), ``optimizer``
(``step``, ``lr``, ``betas``, ``eps``), free-form ``meta`` and ``arrays``: a
list of ``{"name", "shape"}``. Array names are ``param/<name>``,
``adam_m/<name>`` and ``adam_v/<name>``.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cdpauth.nn.model import Model
from cdpauth.nn.optim import AdamState

MAGIC = b"CDPNNCK\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: Model
    epoch: int = 0
    optimizer: AdamState = field(default_factory=AdamState)
    optimizer_hyper: dict = field(default_factory=dict)
    rng_state: dict | None = None
    meta: dict = field(default_factory=dict)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    path = Path(path)
    names = [n for n, _ in ckpt.model.named_params()]
    arrays = [(f"param/{n}", p) for n, p in ckpt.model.named_params()]
    if ckpt.optimizer.m:
        arrays += [(f"adam_m/{n}", m) for n, m in zip(names, ckpt.optimizer.m)]
        arrays += [(f"adam_v/{n}", v) for n, v in zip(names, ckpt.optimizer.v)]
    header = {
        "spec": ckpt.model.spec,
        "input_shape": list(ckpt.model.input_shape),
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "optimizer": {"step": ckpt.optimizer.step, **ckpt.optimizer_hyper},
        "meta": ckpt.meta,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str | Path, dtype=None) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(data[start:start + hlen])
    offset = start + hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        arrays[entry["name"]] = np.frombuffer(data, dtype="<f8", count=count,
                                              offset=offset).reshape(shape)
        offset += 8 * count
    if offset != len(data):
        raise CheckpointError(f"{path}: payload size does not match header")
    model = Model(header["spec"], tuple(header["input_shape"]),
                  dtype=dtype if dtype is not None else np.float64)
    model.load_params({k.removeprefix("param/"): v for k, v in arrays.items()
                       if k.startswith("param/")})
    opt = dict(header["optimizer"])
    state = AdamState(step=opt.pop("step", 0))
    names = [n for n, _ in model.named_params()]
    if f"adam_m/{names[0]}" in arrays:
        state.m = [arrays[f"adam_m/{n}"].astype(model.dtype) for n in names]
        state.v = [arrays[f"adam_v/{n}"].astype(model.dtype) for n in names]
    return Checkpoint(model, header["epoch"], state, opt, header["rng_state"], header["meta"])
