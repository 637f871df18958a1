"""Rich granularity perception unit with difference-aware temporal routing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .nn import CBR, Conv2d, Module
from .tensor import ShapeError, Tensor, concat, mean, relu, sigmoid, softmax, split, take


@dataclass(frozen=True)
class TemporalSwitches:
    """Ablation switches for the video-only branch."""
    shift: bool = True
    attention: bool = True
    diffusion: bool = True


def shift_frames(x: Tensor, clip_len: int) -> Tensor:
    """Cyclic frame shift within each clip: frame t takes frame (t+1) mod T."""
    n = x.shape[0]
    if n % clip_len:
        raise ShapeError("shift", "N", f"multiple of T={clip_len}", n)
    frames = np.arange(n)
    return take(x, frames - frames % clip_len + (frames % clip_len + 1) % clip_len, axis=0)


class TemporalBranch(Module):
    def __init__(self, rng: np.random.Generator, channels: int, clip_len: int,
                 switches: TemporalSwitches = TemporalSwitches()):
        super().__init__()
        c = channels
        self.clip_len = clip_len
        self.switches = switches
        scale = 1.0 / np.sqrt(c)
        self.w_q = Tensor(rng.normal(0, scale, (c, c)), requires_grad=True)
        self.w_k = Tensor(rng.normal(0, scale, (c, c)), requires_grad=True)
        self.w_v = Tensor(rng.normal(0, scale, (c, c)), requires_grad=True)
        self.kernel = Tensor(rng.normal(0, np.sqrt(2.0 / (clip_len * c * 9)), (c, c, clip_len, 3, 3)),
                             requires_grad=True)

    def forward(self, f: Tensor, clip_len: int) -> Tensor:
        n, c, h, w = f.shape
        x = shift_frames(f, clip_len) - f if self.switches.shift else f
        if self.switches.attention:
            xt = x.reshape(n, c, h * w).transpose(0, 2, 1)
            q, k, v = xt @ self.w_q, xt @ self.w_k, xt @ self.w_v
            # rows of the C x C score matrix index key channels
            scores = softmax((k.transpose(0, 2, 1) @ q) * (1.0 / np.sqrt(h * w)), axis=1)
            x = (v @ scores).transpose(0, 2, 1).reshape(n, c, h, w)
        if self.switches.diffusion:
            x = ops.temporal_conv_circular(x, self.kernel, clip_len)
        return x


def rgpu_input(f_mhsiu: Tensor, f_above: Tensor | None) -> Tensor:
    """Decoder wiring: add the up-sampled output of the level above."""
    if f_above is None:
        return f_mhsiu
    if f_above.shape[1] != f_mhsiu.shape[1]:
        raise ShapeError("rgpu_input", "C", f_mhsiu.shape[1], f_above.shape[1])
    return f_mhsiu + ops.bilinear_resize(f_above, *f_mhsiu.shape[2:])


class RGPU(Module):
    def __init__(self, rng: np.random.Generator, channels: int, groups: int = 6, clip_len: int = 1,
                 switches: TemporalSwitches = TemporalSwitches()):
        super().__init__()
        if groups < 2:
            raise ValueError(f"RGPU needs G >= 2, got {groups}")
        c, g = channels, groups
        self.channels = c
        self.groups = g
        self.expand = Conv2d(rng, c, g * c, 1)
        self.blocks = ([CBR(rng, c, 3 * c)]
                       + [CBR(rng, 2 * c, 3 * c) for _ in range(g - 2)]
                       + [CBR(rng, 2 * c, 2 * c)])
        self.squeeze = Conv2d(rng, g * c, c, 1)
        self.excite = Conv2d(rng, c, g * c, 1)
        self.reduce = Conv2d(rng, g * c, c, 1)
        self.temporal = TemporalBranch(rng, c, clip_len, switches)
        self.fuse = [CBR(rng, c, c), CBR(rng, c, c)]

    def group_iterate(self, fhat: Tensor) -> tuple[list[Tensor], list[Tensor]]:
        """Iterative group mixing; returns the per-group (g2, g3) feature sets."""
        c = self.channels
        groups = split(self.expand(fhat), self.groups, axis=1)
        g2s, g3s = [], []
        prev = None
        for i, (gi, block) in enumerate(zip(groups, self.blocks)):
            if i == 0:
                g1, g2, g3 = split(block(gi), [c, c, c], axis=1)
                prev = g1
            elif i == self.groups - 1:
                g2, g3 = split(block(concat([gi, prev], axis=1)), [c, c], axis=1)
            else:
                g1, g2, g3 = split(block(concat([gi, prev], axis=1)), [c, c, c], axis=1)
                prev = g1
            g2s.append(g2)
            g3s.append(g3)
        return g2s, g3s

    def modulation(self, g2s: list[Tensor]) -> Tensor:
        """Gate vector omega in (0, 1), shape (N, G*C, 1, 1)."""
        pooled = mean(concat(g2s, axis=1), axis=(2, 3), keepdims=True)
        return sigmoid(self.excite(relu(self.squeeze(pooled))))

    def channel_modulate(self, g2s: list[Tensor], g3s: list[Tensor]) -> Tensor:
        return self.reduce(self.modulation(g2s) * concat(g3s, axis=1))

    def forward(self, f_mhsiu: Tensor, f_above: Tensor | None = None, clip_len: int | None = None) -> Tensor:
        """``clip_len=None`` is the image path; an integer routes through the
        temporal branch with the batch read as stacked clips of that length."""
        fhat = rgpu_input(f_mhsiu, f_above)
        ft = self.channel_modulate(*self.group_iterate(fhat))
        if clip_len is not None:
            ft = ft + self.temporal(ft, clip_len)
        out = fhat + ft
        for block in self.fuse:
            out = block(out)
        return out


def rgpu_param_count(channels: int, groups: int, clip_len: int = 1) -> int:
    c, g = channels, groups
    expand = c * g * c + g * c
    blocks = (9 * c * 3 * c + 6 * c) + (g - 2) * (9 * 2 * c * 3 * c + 6 * c) + (9 * 2 * c * 2 * c + 4 * c)
    gate = (g * c * c + c) + (c * g * c + g * c)
    reduce = g * c * c + c
    temporal = 3 * c * c + c * c * clip_len * 9
    fuse = 2 * (9 * c * c + 2 * c)
    return expand + blocks + gate + reduce + temporal + fuse
