"""Little-endian binary checkpoint with a config digest and CRC32 trailer.

Layout: magic ``ZNXT``, u32 version, 32-byte digest, u32 tensor count, then
per tensor: u16 name length, UTF-8 name, u8 dtype code, u8 ndim, u32 dims,
raw data; finally the u32 CRC32 of all preceding bytes.
"""
from __future__ import annotations

import os
import struct
import zlib
from collections import OrderedDict

import numpy as np

MAGIC = b"ZNXT"
VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


class CheckpointError(ValueError):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def encode(state: dict[str, np.ndarray], digest: bytes) -> bytes:
    if len(digest) != 32:
        raise ValueError("digest must be 32 bytes")
    parts = [MAGIC, struct.pack("<I", VERSION), digest, struct.pack("<I", len(state))]
    for name, arr in state.items():
        arr = np.asarray(arr)
        if arr.dtype not in CODES:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name}: non-finite values cannot be saved")
        raw = name.encode()
        parts += [struct.pack("<H", len(raw)), raw,
                  struct.pack("<BB", CODES[arr.dtype], arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape),
                  np.ascontiguousarray(arr, dtype=DTYPES[CODES[arr.dtype]]).tobytes()]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(blob: bytes) -> tuple[OrderedDict, bytes]:
    if len(blob) < 48 or blob[:4] != MAGIC:
        raise CheckpointError("magic", "not a checkpoint (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("crc", "CRC mismatch: checkpoint is corrupted")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != VERSION:
        raise CheckpointError("version", f"unsupported checkpoint version {version}")
    digest = body[8:40]
    (count,) = struct.unpack_from("<I", body, 40)
    pos = 44
    state = OrderedDict()
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            name = body[pos + 2:pos + 2 + nlen].decode()
            pos += 2 + nlen
            code, ndim = struct.unpack_from("<BB", body, pos)
            shape = struct.unpack_from(f"<{ndim}I", body, pos + 2)
            pos += 2 + 4 * ndim
            dt = DTYPES[code]
            size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + size > len(body):
                raise CheckpointError("truncated", f"{name}: truncated tensor data")
            state[name] = np.frombuffer(body, dtype=dt, count=size // dt.itemsize,
                                        offset=pos).reshape(shape).astype(dt.newbyteorder("="))
            pos += size
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError("format", f"malformed tensor table: {exc}") from None
    if pos != len(body):
        raise CheckpointError("format", "trailing bytes after tensor table")
    return state, digest


def save(path, state: dict[str, np.ndarray], digest: bytes) -> None:
    blob = encode(state, digest)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load(path, expected_digest: bytes | None = None, force: bool = False) -> tuple[OrderedDict, bytes]:
    """Read a checkpoint; a digest mismatch raises unless ``force``."""
    with open(path, "rb") as fh:
        state, digest = decode(fh.read())
    if expected_digest is not None and digest != expected_digest and not force:
        raise CheckpointError("digest", "checkpoint was saved for a different model configuration "
                                        "(use --force to load anyway)")
    return state, digest


def save_model(path, model) -> None:
    save(path, model.state_dict(), model.cfg.digest())


def load_model(path, model, force: bool = False) -> None:
    state, _ = load(path, model.cfg.digest(), force)
    model.load_state_dict(state)
