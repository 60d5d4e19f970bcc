"""Versioned binary checkpoints.

Layout (little-endian)::

    magic      8 bytes  b"BRNCKPT\\0"
    version    u16
    desc_len   u32, then a UTF-8 JSON architecture descriptor
    n_tensors  u32, then per tensor:
        name_len u16, name, dtype code u8 (4 = f32, 8 = f64),
        ndim u8, shape u32 * ndim, raw data
    checksum   8-byte BLAKE2b digest of everything above
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .network import Architecture, Network

MAGIC = b"BRNCKPT\0"
VERSION = 1
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 4, np.dtype("float64"): 8}


class CheckpointError(ValueError):
    pass


class IntegrityError(CheckpointError):
    pass


def _digest(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def dumps(net: Network) -> bytes:
    desc = json.dumps({
        "arch": net.arch.to_dict(),
        "dtype": net.dtype.name,
        "params": list(net.params),
        "buffers": list(net.buffers),
    }, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<HI", VERSION, len(desc)), desc]
    tensors = [*net.params.items(), *net.buffers.items()]
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        encoded = name.encode()
        arr = np.ascontiguousarray(arr)
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    body = b"".join(parts)
    return body + _digest(body)


def loads(data: bytes) -> Network:
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, stored = data[:-8], data[-8:]
    if _digest(body) != stored:
        raise IntegrityError("checkpoint checksum mismatch")
    pos = len(MAGIC)
    version, desc_len = struct.unpack_from("<HI", body, pos)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos += 6
    desc = json.loads(body[pos : pos + desc_len])
    pos += desc_len
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos : pos + name_len].decode()
        pos += name_len
        code, ndim = struct.unpack_from("<BB", body, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", body, pos)
        pos += 4 * ndim
        dtype = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        tensors[name] = np.frombuffer(body, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(body):
        raise CheckpointError("trailing bytes after tensors")
    arch_d = desc["arch"]
    arch = Architecture(**{**arch_d, "kernels": tuple(arch_d["kernels"])})
    dtype = np.dtype(desc["dtype"])
    return Network(
        arch,
        {k: tensors[k].astype(dtype, copy=False) for k in desc["params"]},
        {k: tensors[k].astype(dtype, copy=False) for k in desc["buffers"]},
        dtype,
    )


def save(net: Network, path: str | Path) -> None:
    Path(path).write_bytes(dumps(net))


def load(path: str | Path) -> Network:
    return loads(Path(path).read_bytes())
