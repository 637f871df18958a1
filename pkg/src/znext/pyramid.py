"""Zoom pyramid construction and scale alignment."""
from __future__ import annotations

from typing import Sequence

from . import ops
from .tensor import ShapeError, Tensor, as_tensor

SCALES = (0.5, 1.0, 1.5)
DOWNSAMPLE_MODES = ("hybrid", "max", "avg", "bilinear", "bicubic")


def scaled_size(n: int, k: float) -> int:
    """``k * n`` rounded to the nearest even integer."""
    return int(2 * round(k * n / 2))


def build_pyramid(image: Tensor, scales: Sequence[float] = SCALES) -> dict[float, Tensor]:
    """Re-scaled views of ``image`` keyed by zoom factor; 1.0 is passed through."""
    image = as_tensor(image)
    if image.ndim != 4:
        raise ShapeError("build_pyramid", "ndim", 4, image.ndim)
    h, w = image.shape[2:]
    if h < 32 or w < 32:
        raise ShapeError("build_pyramid", "H/W", ">= 32", (h, w))
    if h % 4 or w % 4:
        raise ShapeError("build_pyramid", "H/W", "divisible by 4", (h, w))
    pyramid = {}
    for k in scales:
        if k not in SCALES:
            raise ValueError(f"unsupported scale {k}")
        if k == 1.0:
            pyramid[k] = image
        else:
            pyramid[k] = ops.bilinear_resize(image, scaled_size(h, k), scaled_size(w, k))
    return pyramid


def hybrid_downsample(f: Tensor, out_h: int, out_w: int) -> Tensor:
    """Mean of adaptive max- and average-pooling."""
    return (ops.adaptive_pool(f, out_h, out_w, "max") + ops.adaptive_pool(f, out_h, out_w, "avg")) * 0.5


def downsample(f: Tensor, out_h: int, out_w: int, mode: str = "hybrid") -> Tensor:
    if mode == "hybrid":
        return hybrid_downsample(f, out_h, out_w)
    if mode in ("max", "avg"):
        return ops.adaptive_pool(f, out_h, out_w, mode)
    if mode in ("bilinear", "bicubic"):
        # bicubic is approximated by bilinear
        return ops.bilinear_resize(f, out_h, out_w)
    raise ValueError(f"unknown downsample mode {mode!r}")


def align(f: Tensor, size: tuple[int, int], mode: str = "hybrid") -> Tensor:
    """Bring ``f`` to ``size``: bilinear up-sampling, ``mode`` down-sampling."""
    h, w = f.shape[2:]
    if (h, w) == tuple(size):
        return f
    if h <= size[0] and w <= size[1]:
        return ops.bilinear_resize(f, *size)
    if h >= size[0] and w >= size[1]:
        return downsample(f, size[0], size[1], mode)
    raise ShapeError("align", "H/W", f"uniformly larger or smaller than {size}", (h, w))


def align_to_main(f05: Tensor | None, f10: Tensor, f15: Tensor | None,
                  mode: str = "hybrid") -> tuple[Tensor | None, Tensor, Tensor | None]:
    """Resize the auxiliary-scale features to the resolution of ``f10``."""
    c = f10.shape[1]
    for name, f in (("f05", f05), ("f15", f15)):
        if f is not None and f.shape[1] != c:
            raise ShapeError("align_to_main", f"{name}.C", c, f.shape[1])
    size = f10.shape[2:]
    a05 = ops.bilinear_resize(f05, *size) if f05 is not None and f05.shape[2:] != size else f05
    a15 = downsample(f15, *size, mode) if f15 is not None and f15.shape[2:] != size else f15
    return a05, f10, a15
