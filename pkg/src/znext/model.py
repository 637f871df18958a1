"""Full network: zoom pyramid -> shared encoder -> MHSIU per level -> RGPU chain -> head."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import ops
from .encoder import Encoder, EncoderConfig
from .losses import LossConfig
from .mhsiu import MHSIU
from .nn import CBR, Conv2d, Module
from .pyramid import DOWNSAMPLE_MODES, SCALES, align, build_pyramid
from .rgpu import RGPU, TemporalSwitches
from .tensor import ShapeError, Tensor, as_tensor, clamp, no_grad, sigmoid

FUSIONS = ("mhsiu", "add")


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = EncoderConfig()
    heads: int = 4
    groups: int = 6
    clip_len: int = 1
    scales: tuple[float, ...] = SCALES
    downsample: str = "hybrid"
    fusion: str = "mhsiu"
    temporal: TemporalSwitches = TemporalSwitches()
    loss: LossConfig = LossConfig()
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    decay_factor: float = 0.5
    epochs: int = 150
    batch_size: int = 8
    input_side: int = 64
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        c = self.encoder.channels
        if self.heads < 1 or c % self.heads:
            raise ValueError(f"C={c} must be divisible by heads M={self.heads}")
        if self.groups < 2:
            raise ValueError(f"groups G must be >= 2, got {self.groups}")
        if self.clip_len < 1:
            raise ValueError("clip_len T must be >= 1")
        if not self.scales or any(k not in SCALES for k in self.scales) or len(set(self.scales)) != len(self.scales):
            raise ValueError(f"scales must be a subset of {SCALES}, got {self.scales}")
        object.__setattr__(self, "scales", tuple(sorted(self.scales)))
        if self.downsample not in DOWNSAMPLE_MODES:
            raise ValueError(f"unknown downsample mode {self.downsample!r}")
        if self.fusion not in FUSIONS:
            raise ValueError(f"unknown fusion {self.fusion!r}")
        if self.input_side % 4 or self.input_side < 32:
            raise ValueError("input_side must be >= 32 and divisible by 4")

    @property
    def levels(self) -> int:
        return self.encoder.levels

    @property
    def channels(self) -> int:
        return self.encoder.channels

    def architecture(self) -> dict:
        """The fields that determine parameter shapes and forward semantics."""
        return {
            "encoder": asdict(self.encoder),
            "heads": self.heads,
            "groups": self.groups,
            "clip_len": self.clip_len,
            "scales": list(self.scales),
            "downsample": self.downsample,
            "fusion": self.fusion,
            "temporal": asdict(self.temporal),
        }

    def digest(self) -> bytes:
        blob = json.dumps(self.architecture(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).digest()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "encoder" in d:
            enc = dict(d["encoder"])
            enc["widths"] = tuple(enc.get("widths", ()))
            d["encoder"] = EncoderConfig(**enc)
        if "temporal" in d:
            d["temporal"] = TemporalSwitches(**d["temporal"])
        if "loss" in d:
            d["loss"] = LossConfig(**d["loss"])
        for key in ("scales", "betas"):
            if key in d:
                d[key] = tuple(d[key])
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


class Head(Module):
    def __init__(self, rng, c: int):
        super().__init__()
        self.blocks = [CBR(rng, c, c), CBR(rng, c, c)]
        # small init keeps the first predictions near 0.5
        self.out = Conv2d(rng, c, 1, 1, gain=0.05)

    def forward(self, x):
        for b in self.blocks:
            x = b(x)
        return self.out(x)


class Segmenter(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        c, n_scales = cfg.channels, len(cfg.scales)
        self.encoder = Encoder(cfg.encoder, rng)
        self.mhsiu = ([MHSIU(rng, c, cfg.heads, n_scales) for _ in range(cfg.levels)]
                      if n_scales > 1 and cfg.fusion == "mhsiu" else [])
        self.rgpu = [RGPU(rng, c, cfg.groups, cfg.clip_len, cfg.temporal) for _ in range(cfg.levels)]
        self.head = Head(rng, c)

    def fuse_scales(self, feats: dict[tuple[int, float], Tensor], level: int, size) -> Tensor:
        aligned = [align(feats[(level, k)], size, self.cfg.downsample) for k in self.cfg.scales]
        if len(aligned) == 1:
            return aligned[0]
        if self.cfg.fusion == "add":
            out = aligned[0]
            for a in aligned[1:]:
                out = out + a
            return out
        main = self.cfg.scales.index(1.0) if 1.0 in self.cfg.scales else len(aligned) // 2
        return self.mhsiu[level - 1](aligned, main=main)

    def logits(self, x: Tensor, clip_len: int | None = None) -> Tensor:
        """Single-channel logits at the input resolution.

        ``clip_len=None`` processes independent images; an integer reads the
        batch as consecutive clips of that length.
        """
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError("forward", "input", "(N, 3, H, W)", x.shape)
        h, w = x.shape[2:]
        if clip_len is not None:
            if clip_len != self.cfg.clip_len:
                raise ShapeError("forward", "T", self.cfg.clip_len, clip_len)
            if x.shape[0] % clip_len:
                raise ShapeError("forward", "N", f"multiple of T={clip_len}", x.shape[0])
        feats = self.encoder(build_pyramid(x, self.cfg.scales))
        above = None
        for level in range(self.cfg.levels, 0, -1):
            size = (-(-h // 2 ** level), -(-w // 2 ** level))
            fused = self.fuse_scales(feats, level, size)
            above = self.rgpu[level - 1](fused, above, clip_len)
        return ops.bilinear_resize(self.head(above), h, w)

    def forward(self, x: Tensor, clip_len: int | None = None) -> Tensor:
        """Prediction map in [0, 1], shape (N, 1, H, W)."""
        return sigmoid(self.logits(x, clip_len))

    def predict(self, x, clip_len: int | None = None) -> np.ndarray:
        was = self.training
        self.eval()
        try:
            with no_grad():
                return self.forward(as_tensor(x), clip_len).data
        finally:
            self.train(was)


def main_size(side: int, level: int) -> int:
    return -(-side // 2 ** level)


def predict_to_gt_size(pred: Tensor | np.ndarray, gt_h: int, gt_w: int) -> Tensor:
    """Bilinear resize of a prediction map to the mask size, clamped to [0, 1]."""
    pred = as_tensor(pred)
    return clamp(ops.bilinear_resize(pred, gt_h, gt_w), 0.0, 1.0)


def param_count(cfg: ModelConfig) -> int:
    return Segmenter(cfg).param_count()
