"""Versioned binary parameter checkpoints.

Little-endian layout: magic, version, model-kind tag, a provenance JSON
blob (carries the architecture dict, so a checkpoint alone rebuilds the
model), then per tensor: name length, name, rank, dims, raw 32-bit
values. Write -> read -> write reproduces the file byte for byte.
"""

import io
import json
import struct

import numpy as np

from .models import BLSTMModel, CNNModel, config_from_dict, config_to_dict

MAGIC = b"FBCK"
VERSION = 1


def save_checkpoint(path, model, extra_provenance=None):
    prov = {"config": config_to_dict(model.config)}
    if extra_provenance:
        prov.update(extra_provenance)
    blob = json.dumps(prov, sort_keys=True).encode()
    kind = model.kind.encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<H", len(kind)))
    buf.write(kind)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    named = model.named_parameters()
    buf.write(struct.pack("<I", len(named)))
    for name, tensor in named:
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        dims = tensor.data.shape
        buf.write(struct.pack("<B", len(dims)))
        for d in dims:
            buf.write(struct.pack("<I", d))
        buf.write(tensor.data.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, dtype=np.float32):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 8
    (klen,) = struct.unpack_from("<H", raw, off)
    off += 2
    kind = raw[off:off + klen].decode()
    off += klen
    (blen,) = struct.unpack_from("<I", raw, off)
    off += 4
    prov = json.loads(raw[off:off + blen])
    off += blen
    (n_tensors,) = struct.unpack_from("<I", raw, off)
    off += 4

    config = config_from_dict(prov["config"])
    rng = np.random.default_rng(0)  # placeholder values, overwritten below
    if kind == "cnn":
        model = CNNModel.initialize(config, rng, dtype)
    elif kind == "blstm":
        model = BLSTMModel.initialize(config, rng, dtype)
    else:
        raise ValueError(f"{path}: unknown model kind {kind!r}")
    by_name = dict(model.named_parameters())
    if len(by_name) != n_tensors:
        raise ValueError(f"{path}: expected {len(by_name)} tensors, file has {n_tensors}")

    for _ in range(n_tensors):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode()
        off += nlen
        (rank,) = struct.unpack_from("<B", raw, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        vals = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(dims)
        off += 4 * count
        if name not in by_name:
            raise ValueError(f"{path}: unexpected tensor {name!r}")
        target = by_name[name]
        if target.data.shape != tuple(dims):
            raise ValueError(f"{path}: tensor {name!r} has dims {dims}, expected {target.data.shape}")
        target.data = vals.astype(dtype)
        target.grad = np.zeros_like(target.data)
    return model, prov
