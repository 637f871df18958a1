"""Multi-head scale integration: per-head softmax attention over zoom scales."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .nn import BatchNorm2d, Conv2d, Module
from .tensor import ShapeError, Tensor, concat, relu, softmax


class MHSIU(Module):
    """Fuse K aligned scale features of C channels into one C-channel map.

    Head m owns the m-th C/M-channel slice of every scale (3C/M channels for
    three scales) and two private transforms: a 3x3 conv producing one
    attention logit per scale and a 1x1 conv producing one C/M-channel
    branch per scale.  Per pixel, the softmax over scales weights the
    branches; heads are concatenated, the main-scale input is added back and
    the sum goes through BN + ReLU.
    """

    def __init__(self, rng: np.random.Generator, channels: int, heads: int = 4, n_scales: int = 3):
        super().__init__()
        if heads < 1 or channels % heads:
            raise ValueError(f"C={channels} not divisible by M={heads}")
        if n_scales < 2:
            raise ValueError("MHSIU needs at least two scales")
        self.channels = channels
        self.heads = heads
        self.n_scales = n_scales
        kc = n_scales * channels
        self.attn = Conv2d(rng, kc, n_scales * heads, 3, groups=heads)
        self.feat = Conv2d(rng, kc, kc, 1, groups=heads)
        self.bn = BatchNorm2d(channels)

    def _head_major(self, feats: Sequence[Tensor]) -> Tensor:
        n, c, h, w = feats[0].shape
        for i, f in enumerate(feats):
            if f.shape != feats[0].shape:
                raise ShapeError("mhsiu", f"scale {i}", feats[0].shape, f.shape)
        if len(feats) != self.n_scales:
            raise ShapeError("mhsiu", "scales", self.n_scales, len(feats))
        if c != self.channels:
            raise ShapeError("mhsiu", "C", self.channels, c)
        k, m, d = self.n_scales, self.heads, c // self.heads
        big = concat(list(feats), axis=1).reshape(n, k, m, d, h, w)
        return big.transpose(0, 2, 1, 3, 4, 5).reshape(n, m * k * d, h, w)

    def attention(self, feats: Sequence[Tensor]) -> Tensor:
        """Scale weights of shape (N, M, K, h, w); sums to 1 over axis 2."""
        n, _, h, w = feats[0].shape
        logits = self.attn(self._head_major(feats)).reshape(n, self.heads, self.n_scales, h, w)
        return softmax(logits, axis=2)

    def forward(self, feats: Sequence[Tensor], main: int | None = None) -> Tensor:
        """``feats`` are the aligned scale features in scale order; ``main``
        indexes the residual input (defaults to the middle one)."""
        n, c, h, w = feats[0].shape
        k, m, d = self.n_scales, self.heads, c // self.heads
        x = self._head_major(feats)
        attn = softmax(self.attn(x).reshape(n, m, k, h, w), axis=2)
        branches = self.feat(x).reshape(n, m, k, d, h, w)
        fused = (attn.reshape(n, m, k, 1, h, w) * branches).sum(axis=2).reshape(n, c, h, w)
        residual = feats[len(feats) // 2 if main is None else main]
        return relu(self.bn(fused + residual))


def mhsiu_forward(f05: Tensor, f10: Tensor, f15: Tensor, unit: MHSIU) -> Tensor:
    return unit([f05, f10, f15], main=1)


def mhsiu_param_count(channels: int, heads: int, n_scales: int = 3) -> int:
    """Learnable parameters of one :class:`MHSIU` (closed form)."""
    if heads < 1 or channels % heads:
        raise ValueError(f"C={channels} not divisible by M={heads}")
    k, c, m = n_scales, channels, heads
    attn = 9 * k * k * c + k * m
    feat = k * k * c * c // m + k * c
    return attn + feat + 2 * c
