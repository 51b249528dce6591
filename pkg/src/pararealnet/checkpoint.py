"""Versioned binary checkpoints of named float64 tensors.

Layout (little-endian): b"PRNN", u32 version, then per tensor
u32 name length, UTF-8 name, u32 rank, u32 dims..., float64 payload;
a zero name length ends the file.
"""

import struct

import numpy as np

MAGIC = b"PRNN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors):
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", VERSION))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            if not raw:
                raise CheckpointError("tensor names must be non-empty")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())
        fh.write(struct.pack("<I", 0))


def load_tensors(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = 8
    if len(raw) < pos:
        raise CheckpointError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        vals = struct.unpack_from(fmt, raw, pos)
        pos += size
        return vals

    out = {}
    while True:
        (n,) = take("<I")
        if n == 0:
            return out
        name = bytes(take(f"<{n}s")[0]).decode("utf-8")
        (rank,) = take("<I")
        dims = take(f"<{rank}I")
        count = int(np.prod(dims))
        if pos + 8 * count > len(raw):
            raise CheckpointError(f"{path}: tensor {name!r} is truncated")
        out[name] = np.frombuffer(raw, "<f8", count, pos).reshape(dims).astype(np.float64)
        pos += 8 * count


def save_training_state(path, params, velocity, epoch):
    """Parameters, momentum buffers and the next epoch to run."""
    tensors = dict(params)
    tensors.update({f"momentum:{k}": v for k, v in velocity.items()})
    tensors["meta:epoch"] = np.array([float(epoch)])
    save_tensors(path, tensors)


def load_training_state(path):
    """Returns ``(params, velocity, epoch)``."""
    tensors = load_tensors(path)
    epoch = int(tensors.pop("meta:epoch")[0])
    velocity = {k[len("momentum:"):]: v for k, v in tensors.items() if k.startswith("momentum:")}
    params = {k: v for k, v in tensors.items() if not k.startswith("momentum:")}
    return params, velocity, epoch


def restore_params(net_params, saved):
    """Copy ``saved`` into the live parameter arrays, in place."""
    if net_params.keys() != saved.keys():
        diff = sorted(set(net_params) ^ set(saved))
        raise CheckpointError(f"checkpoint does not match the network: {diff[:5]}")
    for k, p in net_params.items():
        if p.shape != saved[k].shape:
            raise CheckpointError(f"{k}: shape {saved[k].shape} != {p.shape}")
        p[...] = saved[k]
