"""Binary PGM (P5) and PPM (P6) codecs, 8-bit only."""
from __future__ import annotations

import os

import numpy as np


class PnmError(ValueError):
    """Malformed or truncated netpbm file."""

    def __init__(self, path, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason


_WHITESPACE = b" \t\n\r\v\f"


def _header_tokens(buf: bytes, path, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset of the single whitespace byte that
    terminates the last one.
    """
    tokens, pos, n = [], 0, len(buf)
    while len(tokens) < count:
        while pos < n and (buf[pos] in _WHITESPACE or buf[pos] == ord("#")):
            if buf[pos] == ord("#"):
                while pos < n and buf[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and buf[pos] not in _WHITESPACE and buf[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise PnmError(path, "truncated header")
        tokens.append(buf[start:pos])
    if pos >= n or buf[pos] not in _WHITESPACE:
        raise PnmError(path, "header must end with a single whitespace byte")
    return tokens, pos


def decode(buf: bytes, path="<bytes>") -> np.ndarray:
    """Decode P5 to (H, W) or P6 to (H, W, 3) uint8."""
    if buf[:2] not in (b"P5", b"P6"):
        raise PnmError(path, f"unsupported magic {buf[:2]!r}")
    tokens, pos = _header_tokens(buf, path, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PnmError(path, f"non-integer header field in {tokens[1:]!r}") from None
    if width < 1 or height < 1:
        raise PnmError(path, f"bad size {width}x{height}")
    if maxval != 255:
        raise PnmError(path, f"maxval must be 255, got {maxval}")
    channels = 1 if tokens[0] == b"P5" else 3
    need = width * height * channels
    payload = buf[pos + 1:]
    if len(payload) < need:
        raise PnmError(path, f"truncated payload: {len(payload)} of {need} bytes")
    data = np.frombuffer(payload, dtype=np.uint8, count=need)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return data.reshape(shape).copy()


def encode(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise TypeError(f"pixels must be uint8, got {pixels.dtype}")
    if pixels.ndim == 2:
        magic = b"P5"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3), got {pixels.shape}")
    h, w = pixels.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(pixels).tobytes()


def read(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read(), path)


def write(path, pixels: np.ndarray) -> None:
    blob = encode(pixels)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def mask_to_bytes(mask: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(mask) > 0.5, 255, 0).astype(np.uint8)


def read_mask(path) -> np.ndarray:
    """{0, 1} float32 mask; any nonzero byte counts as foreground."""
    px = read(path)
    if px.ndim != 2:
        raise PnmError(path, "mask must be a P5 grayscale image")
    return (px > 0).astype(np.float32)


def write_mask(path, mask: np.ndarray) -> None:
    write(path, mask_to_bytes(mask))


def prediction_to_bytes(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.size and (p.min() < 0 or p.max() > 1):
        raise ValueError("prediction values must lie in [0, 1]")
    return np.floor(p * 255).astype(np.uint8)


def write_prediction(path, p: np.ndarray) -> None:
    write(path, prediction_to_bytes(p))


def read_prediction(path) -> np.ndarray:
    px = read(path)
    if px.ndim != 2:
        raise PnmError(path, "prediction must be a P5 grayscale image")
    return px.astype(np.float64) / 255


def read_image(path) -> np.ndarray:
    """RGB image as float32 (3, H, W) in [0, 1]; grayscale is replicated."""
    px = read(path)
    if px.ndim == 2:
        px = np.repeat(px[..., None], 3, axis=2)
    return px.transpose(2, 0, 1).astype(np.float32) / 255


def write_image(path, image: np.ndarray) -> None:
    """Write a (3, H, W) float image in [0, 1] (or uint8 (H, W, 3)) as P6."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        image = np.floor(np.clip(image, 0, 1) * 255 + 0.5).astype(np.uint8).transpose(1, 2, 0)
    write(path, image)
