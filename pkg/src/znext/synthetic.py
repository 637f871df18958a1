"""Seeded camouflage toy data: textured blobs on the same texture.

Background and objects share one texture model (smoothed Gaussian noise);
the object region differs only by a mean-intensity shift of ``contrast``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import netpbm
from .data import Sample, write_manifest

TEXTURE_STD = 0.08
MAX_DRIFT = 4.0


@dataclass(frozen=True)
class SyntheticSpec:
    count: int = 16
    side: int = 64
    objects: tuple[int, int] = (1, 3)
    contrast: float = 0.15
    clip_len: int = 1
    drift: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if self.side < 32 or self.side % 4:
            raise ValueError(f"side must be >= 32 and divisible by 4, got {self.side}")
        lo, hi = self.objects
        if not 1 <= lo <= hi <= 3:
            raise ValueError(f"objects per image must lie in 1..3, got {self.objects}")
        if not 0 < self.contrast <= 0.5:
            raise ValueError(f"contrast must lie in (0, 0.5], got {self.contrast}")
        if self.clip_len < 1:
            raise ValueError("clip_len must be >= 1")
        if not 0 <= self.drift <= MAX_DRIFT:
            raise ValueError(f"drift must lie in [0, {MAX_DRIFT}]")


def texture(rng: np.random.Generator, h: int, w: int, sigma: float = 1.5) -> np.ndarray:
    """Zero-mean smoothed noise with standard deviation TEXTURE_STD."""
    n = gaussian_filter(rng.standard_normal((h, w)), sigma, mode="wrap")
    return n * (TEXTURE_STD / n.std())


@dataclass
class Blob:
    cy: float
    cx: float
    a: float       # semi-axes
    b: float
    theta: float
    wobble: float  # radial modulation amplitude
    lobes: int
    phase: float

    def mask(self, h: int, w: int, cy: float | None = None, cx: float | None = None) -> np.ndarray:
        cy = self.cy if cy is None else cy
        cx = self.cx if cx is None else cx
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        dy, dx = yy - cy, xx - cx
        c, s = np.cos(self.theta), np.sin(self.theta)
        u, v = c * dx + s * dy, -s * dx + c * dy
        ang = np.arctan2(v / self.b, u / self.a)
        radius = 1 + self.wobble * np.sin(self.lobes * ang + self.phase)
        return (u / self.a) ** 2 + (v / self.b) ** 2 <= radius ** 2


def _random_blob(rng: np.random.Generator, side: int) -> Blob:
    a, b = rng.uniform(side / 7, side / 4, size=2)
    margin = max(a, b) * 1.1 + 1
    return Blob(cy=rng.uniform(margin, side - margin), cx=rng.uniform(margin, side - margin),
                a=a, b=b, theta=rng.uniform(0, np.pi), wobble=rng.uniform(0, 0.1),
                lobes=int(rng.integers(2, 5)), phase=rng.uniform(0, 2 * np.pi))


def _walk(rng: np.random.Generator, blob: Blob, steps: int, drift: float, side: int) -> list[tuple[float, float]]:
    """Positions of a blob along a random walk with fixed step length ``drift``."""
    margin = max(blob.a, blob.b) * 1.1 + 1
    pos = [(blob.cy, blob.cx)]
    heading = rng.uniform(0, 2 * np.pi)
    for _ in range(steps - 1):
        heading += rng.normal(0, 0.5)
        y = pos[-1][0] + drift * np.sin(heading)
        x = pos[-1][1] + drift * np.cos(heading)
        # bounce off the borders
        if not margin <= y <= side - margin:
            heading = -heading
            y = pos[-1][0] + drift * np.sin(heading)
        if not margin <= x <= side - margin:
            heading = np.pi - heading
            x = pos[-1][1] + drift * np.cos(heading)
        pos.append((float(np.clip(y, margin, side - margin)), float(np.clip(x, margin, side - margin))))
    return pos


def _render(rng, spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """One image or clip as uint8 frames (T, H, W, 3) and {0, 1} masks (T, H, W)."""
    side, t = spec.side, spec.clip_len
    n_obj = int(rng.integers(spec.objects[0], spec.objects[1] + 1))
    sign = rng.choice((-1.0, 1.0))
    base = 0.5 - sign * spec.contrast / 2
    tint = rng.uniform(0.85, 1.15, size=3)
    bg_tex = texture(rng, side, side)
    pad = int(np.ceil(MAX_DRIFT * t)) + 1
    obj_tex = texture(rng, side + 2 * pad, side + 2 * pad)
    blobs = [_random_blob(rng, side) for _ in range(n_obj)]
    paths = [_walk(rng, b, t, spec.drift, side) for b in blobs]
    channel_noise = rng.normal(0, 0.01, size=(t, side, side, 3))

    frames = np.empty((t, side, side, 3), dtype=np.uint8)
    masks = np.empty((t, side, side), dtype=np.uint8)
    for f in range(t):
        gray = base + bg_tex
        mask = np.zeros((side, side), dtype=bool)
        for blob, path in zip(blobs, paths):
            cy, cx = path[f]
            m = blob.mask(side, side, cy, cx)
            # object texture moves with the object
            oy, ox = int(round(cy - blob.cy)), int(round(cx - blob.cx))
            tex = obj_tex[pad - oy:pad - oy + side, pad - ox:pad - ox + side]
            gray = np.where(m, base + sign * spec.contrast + tex, gray)
            mask |= m
        rgb = gray[..., None] * tint + channel_noise[f]
        frames[f] = np.floor(np.clip(rgb, 0, 1) * 255 + 0.5).astype(np.uint8)
        masks[f] = mask
    return frames, masks


def generate_raw(spec: SyntheticSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """Uint8 frames (T, H, W, 3) and binary masks (T, H, W) per sample."""
    rng = np.random.default_rng(spec.seed)
    out = []
    for _ in range(spec.count):
        out.append(_render(rng, spec))
    return out


def generate_synthetic(spec: SyntheticSpec) -> list[Sample]:
    samples = []
    for i, (frames, masks) in enumerate(generate_raw(spec)):
        names = tuple(f"{i:04d}" if spec.clip_len == 1 else f"{i:04d}_{f:02d}" for f in range(len(frames)))
        samples.append(Sample(frames.transpose(0, 3, 1, 2).astype(np.float32) / 255,
                              masks[:, None].astype(np.float32), names))
    return samples


def write_synthetic(out_dir, spec: SyntheticSpec, manifest_name: str = "manifest.txt") -> Path:
    """Write images/*.ppm, masks/*.pgm and a manifest; returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (frames, masks) in enumerate(generate_raw(spec)):
        entry = []
        for f in range(len(frames)):
            name = f"{i:04d}" if spec.clip_len == 1 else f"{i:04d}_{f:02d}"
            img, msk = out / "images" / f"{name}.ppm", out / "masks" / f"{name}.pgm"
            netpbm.write(img, frames[f])
            netpbm.write_mask(msk, masks[f])
            entry.append((str(img), str(msk)))
        entries.append(entry)
    manifest = out / manifest_name
    write_manifest(manifest, entries, video=spec.clip_len > 1)
    return manifest
