"""Versioned binary container of shape-tagged tensors.

Layout (little-endian)::

    b"DASRCKPT" | u32 version | u32 meta_len | meta JSON (utf-8) | u32 count
    then per tensor: u16 name_len | name | u8 dtype_len | dtype str | u8 ndim
                     | ndim x u32 shape | raw data
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"DASRCKPT"
VERSION = 1


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, order="C")
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in "|" else arr.dtype
        arr = arr.astype(dt, copy=False)
        name_b, dt_b = name.encode(), dt.str.encode()
        parts += [struct.pack("<H", len(name_b)), name_b, struct.pack("<B", len(dt_b)), dt_b]
        parts += [struct.pack("<B", arr.ndim), struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint container")
    version, meta_len = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    meta = json.loads(raw[pos : pos + meta_len])
    pos += meta_len
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", raw, pos)
        name = raw[pos + 2 : pos + 2 + n].decode()
        pos += 2 + n
        (n,) = struct.unpack_from("<B", raw, pos)
        dtype = np.dtype(raw[pos + 1 : pos + 1 + n].decode())
        pos += 1 + n
        (ndim,) = struct.unpack_from("<B", raw, pos)
        shape = struct.unpack_from(f"<{ndim}I", raw, pos + 1)
        pos += 1 + 4 * ndim
        size = int(np.prod(shape)) * dtype.itemsize
        tensors[name] = np.frombuffer(raw[pos : pos + size], dtype=dtype).reshape(shape).copy()
        pos += size
    return tensors, meta


def save_module(path: str | Path, module: torch.nn.Module, meta: dict | None = None, extra: dict | None = None) -> None:
    tensors = {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}
    for k, v in (extra or {}).items():
        tensors[f"extra/{k}"] = np.asarray(v)
    save_tensors(path, tensors, meta)


def load_module(path: str | Path, module: torch.nn.Module) -> tuple[dict, dict]:
    """Load weights in place; returns ``(meta, extra_tensors)``."""
    tensors, meta = load_tensors(path)
    extra = {k[6:]: v for k, v in tensors.items() if k.startswith("extra/")}
    state = {k: torch.from_numpy(v) for k, v in tensors.items() if not k.startswith("extra/")}
    module.load_state_dict(state)
    return meta, extra
