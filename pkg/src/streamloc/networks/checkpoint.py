"""Binary checkpoint format.

Layout (little-endian)::

    b"SLCK" | version u16 | config sha256 (32 bytes)
    repeated: name_len u16 | name utf-8 | dtype u8 | rank u8 | dims u32 * rank | raw data
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from ..exceptions import CheckpointError, ParseError
from .module import Module

MAGIC = b"SLCK"
VERSION = 1
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_OF = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def save_checkpoint(network: Module, path) -> Path:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<H", VERSION), network.config_hash()]
    for name, p in network.named_parameters().items():
        raw_name = name.encode("utf-8")
        data = p.data
        tag = _TAG_OF[data.dtype]
        chunks.append(struct.pack("<H", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<BB", tag, data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(np.ascontiguousarray(data, dtype=_DTYPE_TAGS[tag]).tobytes())
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)
    return path


def read_checkpoint(path) -> tuple[int, bytes, dict[str, np.ndarray]]:
    """Parse a checkpoint file fully; returns ``(version, config_hash, arrays)``."""
    buf = Path(path).read_bytes()
    if len(buf) < 38 or buf[:4] != MAGIC:
        raise ParseError(f"{path}: not a checkpoint (bad magic or header)")
    (version,) = struct.unpack_from("<H", buf, 4)
    config_hash = buf[6:38]
    pos = 38
    arrays: dict[str, np.ndarray] = {}

    def need(n: int, what: str) -> None:
        if pos + n > len(buf):
            raise ParseError(f"{path}: truncated while reading {what} at byte {pos}")

    while pos < len(buf):
        need(2, "name length")
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        need(nlen + 2, "record header")
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        tag, rank = struct.unpack_from("<BB", buf, pos)
        pos += 2
        if tag not in _DTYPE_TAGS:
            raise ParseError(f"{path}: record {name!r} has unknown dtype tag {tag}")
        need(4 * rank, f"dims of {name!r}")
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        dtype = _DTYPE_TAGS[tag]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        need(nbytes, f"data of {name!r}")
        arrays[name] = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(dims).copy()
        pos += nbytes
    return version, config_hash, arrays


def load_checkpoint(path, network: Module) -> Module:
    """Fill ``network`` from ``path``; nothing is modified unless every check passes."""
    version, config_hash, arrays = read_checkpoint(path)
    if version != VERSION:
        raise CheckpointError(f"{path}: format version expected {VERSION}, found {version}")
    expected = network.config_hash()
    if config_hash != expected:
        raise CheckpointError(
            f"{path}: config hash mismatch, expected {expected.hex()[:16]}, found {config_hash.hex()[:16]}"
        )
    params = network.named_parameters()
    missing = sorted(set(params) - set(arrays))
    extra = sorted(set(arrays) - set(params))
    if missing or extra:
        raise CheckpointError(f"{path}: parameter names differ, missing {missing}, unexpected {extra}")
    for name, p in params.items():
        if arrays[name].shape != p.shape:
            raise CheckpointError(f"{path}: {name} expected shape {p.shape}, found {arrays[name].shape}")
    for name, p in params.items():
        p.data = arrays[name].astype(p.data.dtype, copy=False)
    network.trained = True
    return network
