"""Shared triplet feature encoder with per-level channel compression."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import CBR, Module
from .tensor import ShapeError, Tensor

DEFAULT_WIDTHS = (16, 24, 32, 48, 64, 96)


@dataclass(frozen=True)
class EncoderConfig:
    levels: int = 4
    channels: int = 16
    widths: tuple[int, ...] = ()

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("encoder needs at least 2 levels")
        if self.channels < 4:
            raise ValueError("compressed width C must be >= 4")
        if self.widths and len(self.widths) != self.levels:
            raise ValueError(f"{len(self.widths)} stage widths for {self.levels} levels")

    def stage_widths(self) -> tuple[int, ...]:
        if self.widths:
            return tuple(self.widths)
        if self.levels > len(DEFAULT_WIDTHS):
            return DEFAULT_WIDTHS + (DEFAULT_WIDTHS[-1],) * (self.levels - len(DEFAULT_WIDTHS))
        return DEFAULT_WIDTHS[:self.levels]


class Stage(Module):
    def __init__(self, rng, cin: int, cout: int):
        super().__init__()
        self.down = CBR(rng, cin, cout, 3, stride=2)
        self.conv = CBR(rng, cout, cout, 3)

    def forward(self, x):
        return self.conv(self.down(x))


class Encoder(Module):
    """Stride-2 stages (level i at 1/2**i resolution) plus 1x1 compression to C."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        widths = cfg.stage_widths()
        cins = (3,) + widths[:-1]
        self.stages = [Stage(rng, ci, co) for ci, co in zip(cins, widths)]
        self.compress = [CBR(rng, co, cfg.channels, 1) for co in widths]

    def extract(self, x: Tensor) -> list[Tensor]:
        """Compressed features of one scale, level 1 first."""
        need = 2 ** self.cfg.levels
        if x.shape[2] < need or x.shape[3] < need:
            raise ShapeError("encode", "H/W", f">= {need}", x.shape[2:])
        feats = []
        for stage, comp in zip(self.stages, self.compress):
            x = stage(x)
            feats.append(comp(x))
        return feats

    def forward(self, pyramid: dict[float, Tensor]) -> dict[tuple[int, float], Tensor]:
        features = {}
        for k, img in pyramid.items():
            for i, f in enumerate(self.extract(img), start=1):
                features[(i, k)] = f
        return features


def encode(pyramid: dict[float, Tensor], encoder: Encoder) -> dict[tuple[int, float], Tensor]:
    return encoder(pyramid)


def init_weights(cfg: EncoderConfig, seed: int) -> Encoder:
    return Encoder(cfg, np.random.default_rng(seed))
