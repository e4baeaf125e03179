"""Versioned little-endian binary checkpoints for model parameters."""

from __future__ import annotations

import struct

import numpy as np

from .model import ModelParams, zero_noise

MAGIC = b"GWCK"
VERSION = 1


def params_to_bytes(params: ModelParams) -> bytes:
    out = [MAGIC]
    out.append(
        struct.pack(
            "<IIIIIBI",
            VERSION,
            params.d,
            params.K,
            params.Kp,
            params.hidden,
            1 if params.noisy else 0,
            len(params.tensors),
        )
    )
    for name in sorted(params.tensors):
        arr = np.ascontiguousarray(params.tensors[name], dtype="<f8")
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def params_from_bytes(data: bytes) -> ModelParams:
    if data[:4] != MAGIC:
        raise ValueError("not a parameter checkpoint")
    off = 4
    version, d, K, Kp, hidden, noisy, n = struct.unpack_from("<IIIIIBI", data, off)
    off += struct.calcsize("<IIIIIBI")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version: {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        tensors[name] = arr.astype(np.float64)
    params = ModelParams(d, K, Kp, hidden, bool(noisy), tensors)
    zero_noise(params)
    return params


def save_params(params: ModelParams, path):
    with open(path, "wb") as f:
        f.write(params_to_bytes(params))


def load_params(path) -> ModelParams:
    with open(path, "rb") as f:
        return params_from_bytes(f.read())
