"""Image-shaped differentiable primitives: convolution, pooling, resizing, BN."""
from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, concat, record, take


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation over NCHW input via im2col and batched GEMM."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4:
        raise ShapeError("conv2d", "x.ndim", 4, x.ndim)
    if w.ndim != 4:
        raise ShapeError("conv2d", "w.ndim", 4, w.ndim)
    n, cin, h, wd = x.shape
    cout, cg, kh, kw = w.shape
    if kh < 1 or kw < 1:
        raise ShapeError("conv2d", "kernel", ">= 1", (kh, kw))
    if padding < 0:
        raise ShapeError("conv2d", "padding", ">= 0", padding)
    if cin % groups:
        raise ShapeError("conv2d", "Cin", f"divisible by groups={groups}", cin)
    if cg != cin // groups:
        raise ShapeError("conv2d", "w.Cin/groups", cin // groups, cg)
    if cout % groups:
        raise ShapeError("conv2d", "Cout", f"divisible by groups={groups}", cout)
    if b is not None and b.shape != (cout,):
        raise ShapeError("conv2d", "bias", (cout,), b.shape)
    s, p = stride, padding
    ho = (h + 2 * p - kh) // s + 1
    wo = (wd + 2 * p - kw) // s + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d", "H'/W'", ">= 1", (ho, wo))

    xd = x.data
    pointwise = kh == 1 and kw == 1 and s == 1 and p == 0
    k = cg * kh * kw
    if pointwise:
        cols = xd.reshape(n, groups, k, ho * wo)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
        cols = np.empty((n, cin, kh, kw, ho, wo), dtype=xd.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, :, i, j] = xp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s]
        cols = cols.reshape(n, groups, k, ho * wo)
    wm = w.data.reshape(groups, cout // groups, k)
    out = np.matmul(wm, cols).reshape(n, cout, ho, wo)
    if b is not None:
        out += b.data.reshape(1, cout, 1, 1)

    def bw(g):
        g4 = g.reshape(n, groups, cout // groups, ho * wo)
        gw = gx = gb = None
        if w.requires_grad:
            gw = np.matmul(g4, cols.swapaxes(-1, -2)).sum(axis=0).reshape(w.shape)
        if x.requires_grad:
            gcols = np.matmul(wm.swapaxes(-1, -2), g4)
            if pointwise:
                gx = gcols.reshape(n, cin, h, wd)
            else:
                gcols = gcols.reshape(n, cin, kh, kw, ho, wo)
                gxp = np.zeros((n, cin, h + 2 * p, wd + 2 * p), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += gcols[:, :, i, j]
                gx = gxp[:, :, p:p + h, p:p + wd] if p else gxp
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb) if b is not None else (gx, gw)

    inputs = (x, w, b) if b is not None else (x, w)
    return record("conv2d", out, inputs, bw)


def _pool_windows(n_in: int, n_out: int):
    """Window index table for adaptive pooling along one axis.

    Returns ``(idx, valid)`` of shape (n_out, kmax).  Rows shorter than kmax
    are padded by repeating their last index so that gathered values stay
    inside the window; ``valid`` masks the padding.
    """
    i = np.arange(n_out)
    starts = (i * n_in) // n_out
    ends = -((-(i + 1) * n_in) // n_out)
    kmax = int((ends - starts).max())
    idx = starts[:, None] + np.arange(kmax)[None, :]
    valid = idx < ends[:, None]
    idx = np.minimum(idx, ends[:, None] - 1)
    return idx, valid


def adaptive_pool(x: Tensor, out_h: int, out_w: int, mode: str = "avg") -> Tensor:
    """Adaptive max/avg pooling; window i spans [floor(iH/oh), ceil((i+1)H/oh))."""
    x = as_tensor(x)
    if mode not in ("max", "avg"):
        raise ValueError(f"unknown pooling mode {mode!r}")
    n, c, h, w = x.shape
    if not (1 <= out_h <= h):
        raise ShapeError("adaptive_pool", "out_h", f"1..{h}", out_h)
    if not (1 <= out_w <= w):
        raise ShapeError("adaptive_pool", "out_w", f"1..{w}", out_w)
    if out_h == h and out_w == w:
        return record(f"adaptive_{mode}_pool", x.data.copy(), (x,), lambda g: (g,))

    ridx, rvalid = _pool_windows(h, out_h)
    cidx, cvalid = _pool_windows(w, out_w)
    kh, kw = ridx.shape[1], cidx.shape[1]
    # (oh, ow, kh*kw) flat input positions and validity
    lin = (ridx[:, None, :, None] * w + cidx[None, :, None, :]).reshape(out_h, out_w, kh * kw)
    valid = (rvalid[:, None, :, None] & cvalid[None, :, None, :]).reshape(out_h, out_w, kh * kw)
    flat = x.data.reshape(n, c, h * w)
    win = flat[:, :, lin]  # (n, c, oh, ow, K)
    hw = h * w
    base = (np.arange(n * c) * hw).reshape(n, c, 1, 1)

    if mode == "max":
        arg = win.argmax(axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        chosen = np.take_along_axis(np.broadcast_to(lin, win.shape), arg[..., None], axis=-1)[..., 0]

        def bw(g):
            gx = np.bincount((base + chosen).ravel(), weights=g.ravel(), minlength=n * c * hw)
            return (gx.reshape(x.shape).astype(g.dtype, copy=False),)

        return record("adaptive_max_pool", out, (x,), bw)

    count = valid.sum(axis=-1)
    out = (win * valid).sum(axis=-1) / count

    def bw(g):
        share = (g / count)[..., None] * valid  # (n, c, oh, ow, K)
        idx = base[..., None] + lin
        gx = np.bincount(np.broadcast_to(idx, share.shape).ravel(), weights=share.ravel(),
                         minlength=n * c * hw)
        return (gx.reshape(x.shape).astype(g.dtype, copy=False),)

    return record("adaptive_avg_pool", out.astype(x.dtype, copy=False), (x,), bw)


def _interp_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Row-stochastic matrix for 1-D linear resampling with half-pixel centres."""
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    lam = src - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1 - lam)
    np.add.at(m, (rows, i1), lam)
    return m.astype(dtype)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    x = as_tensor(x)
    if out_h < 1 or out_w < 1:
        raise ShapeError("bilinear_resize", "out", ">= 1", (out_h, out_w))
    if x.ndim != 4:
        raise ShapeError("bilinear_resize", "x.ndim", 4, x.ndim)
    h, w = x.shape[2:]
    if (h, w) == (out_h, out_w):
        return record("bilinear_resize", x.data.copy(), (x,), lambda g: (g,))
    mh = _interp_matrix(h, out_h, x.dtype)
    mwt = _interp_matrix(w, out_w, x.dtype).T
    out = np.matmul(np.matmul(mh, x.data), mwt)

    def bw(g):
        return (np.matmul(np.matmul(mh.T, g), mwt.T),)

    return record("bilinear_resize", out, (x,), bw)


BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                running_var: np.ndarray, training: bool, momentum: float = BN_MOMENTUM,
                eps: float = BN_EPS) -> Tensor:
    """Per-channel batch normalisation.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place (unbiased variance for the running
    estimate).
    """
    x = as_tensor(x)
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("batchnorm2d", "C", c, (gamma.shape, beta.shape))
    m = n * h * w
    if m == 0:
        raise ShapeError("batchnorm2d", "elements per channel", "> 0", 0)
    xd = x.data
    gd = gamma.data.reshape(1, c, 1, 1)
    if training:
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype).reshape(1, c, 1, 1)
    xhat = (xd - mu.astype(xd.dtype).reshape(1, c, 1, 1)) * inv
    out = xhat * gd + beta.data.reshape(1, c, 1, 1)

    def bw(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            if training:
                gsum = g.sum(axis=(0, 2, 3), keepdims=True)
                gxh = (g * xhat).sum(axis=(0, 2, 3), keepdims=True)
                gx = gd * inv / m * (m * g - gsum - xhat * gxh)
            else:
                gx = g * gd * inv
        return gx, ggamma, gbeta

    return record("batchnorm2d", out, (x, gamma, beta), bw)


def temporal_conv_circular(x: Tensor, w: Tensor, clip_len: int | None = None) -> Tensor:
    """Bias-free temporal diffusion: frame t sums 3x3 convs of frames (t+s) mod T.

    ``x`` holds one or more clips stacked along the batch axis; ``w`` has
    shape (C, C, T, kh, kw) and T must equal the clip length.
    """
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 5:
        raise ShapeError("temporal_conv_circular", "w.ndim", 5, w.ndim)
    cout, cin, t_kernel, kh, kw = w.shape
    t_clip = x.shape[0] if clip_len is None else clip_len
    if t_kernel != t_clip:
        raise ShapeError("temporal_conv_circular", "T", t_clip, t_kernel)
    n = x.shape[0]
    if n % t_clip:
        raise ShapeError("temporal_conv_circular", "N", f"multiple of T={t_clip}", n)
    if x.shape[1] != cin:
        raise ShapeError("temporal_conv_circular", "C", cin, x.shape[1])
    frames = np.arange(n)
    clip0, t = frames - frames % t_clip, frames % t_clip
    stacked = concat([take(x, clip0 + (t + s) % t_clip, axis=0) for s in range(t_clip)], axis=1)
    wk = w.transpose(0, 2, 1, 3, 4).reshape(cout, t_clip * cin, kh, kw)
    return conv2d(stacked, wk, None, stride=1, padding=kh // 2)
