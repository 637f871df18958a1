"""In-memory samples and the text manifest that lists them on disk.

An image manifest has one ``image<TAB>mask`` line per sample.  A video
manifest starts with a ``#video`` line and holds clips as blocks of such
lines separated by blank lines.  Relative paths resolve against the
manifest's directory.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import netpbm

VIDEO_HEADER = "#video"


class ManifestError(ValueError):
    pass


@dataclass
class Sample:
    """One image (T = 1) or clip: frames (T, 3, H, W), masks (T, 1, H, W)."""
    frames: np.ndarray
    masks: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise ValueError(f"frames must be (T, 3, H, W), got {self.frames.shape}")
        t, _, h, w = self.frames.shape
        if self.masks.shape != (t, 1, h, w):
            raise ValueError(f"masks {self.masks.shape} do not match frames {self.frames.shape}")
        if len(self.names) != t:
            raise ValueError("one name per frame required")

    @property
    def clip_len(self) -> int:
        return self.frames.shape[0]


Entry = list[tuple[str, str]]


def read_manifest(path) -> tuple[list[Entry], bool]:
    """Parse a manifest into entries of (image, mask) path pairs.

    Returns the entries and whether the manifest is a video manifest.
    """
    path = Path(path)
    root = path.parent
    lines = path.read_text().splitlines()
    video = bool(lines) and lines[0].strip() == VIDEO_HEADER
    if video:
        lines = lines[1:]
    entries: list[Entry] = []
    block: Entry = []
    for lineno, raw in enumerate(lines, start=2 if video else 1):
        line = raw.strip()
        if not line:
            if block:
                entries.append(block)
                block = []
            continue
        if line.startswith("#"):
            continue
        parts = raw.rstrip("\r\n").split("\t")
        if len(parts) != 2:
            raise ManifestError(f"{path}:{lineno}: expected 'image<TAB>mask', got {raw!r}")
        block.append(tuple(os.path.normpath(root / p.strip()) for p in parts))
        if not video:
            entries.append(block)
            block = []
    if block:
        entries.append(block)
    return entries, video


def write_manifest(path, entries: list[Entry], video: bool = False) -> None:
    """Write entries with paths relative to the manifest directory."""
    path = Path(path)
    root = path.parent.resolve()

    def rel(p):
        return os.path.relpath(Path(p).resolve(), root)

    out = [VIDEO_HEADER] if video else []
    for i, entry in enumerate(entries):
        if not video and len(entry) != 1:
            raise ManifestError("image manifests hold one pair per entry")
        if video and i:
            out.append("")
        out.extend(f"{rel(img)}\t{rel(mask)}" for img, mask in entry)
    path.write_text("\n".join(out) + ("\n" if out else ""))


def missing_files(entries: list[Entry]) -> list[str]:
    return [p for entry in entries for pair in entry for p in pair if not os.path.isfile(p)]


def load_entry(entry: Entry) -> Sample:
    frames = np.stack([netpbm.read_image(img) for img, _ in entry])
    masks = np.stack([netpbm.read_mask(m)[None] for _, m in entry])
    return Sample(frames, masks, tuple(Path(img).stem for img, _ in entry))


def load_dataset(path) -> tuple[list[Sample], bool]:
    """Load every sample of a manifest; fails listing all missing files."""
    entries, video = read_manifest(path)
    missing = missing_files(entries)
    if missing:
        raise FileNotFoundError("missing files: " + ", ".join(missing))
    return [load_entry(e) for e in entries], video
