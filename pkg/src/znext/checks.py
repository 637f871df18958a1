"""Registry of gradient checks run by ``znext gradcheck``.

Each entry builds small random float64 inputs away from kinks (ReLU at 0,
max-pool ties, clamp bounds) and compares analytic and numeric gradients.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops, tensor as T
from .encoder import EncoderConfig
from .gradcheck import GradReport, gradcheck
from .losses import LossConfig, bce_with_logits, total_loss, ual
from .mhsiu import MHSIU
from .model import ModelConfig, Segmenter
from .rgpu import RGPU
from .tensor import precision

GROUPS = ("tensor", "mhsiu", "rgpu", "model")


@dataclass(frozen=True)
class Check:
    name: str
    group: str
    tol: float
    run: Callable[[np.random.Generator], GradReport]


REGISTRY: dict[str, Check] = {}


def register(name: str, group: str = "tensor", tol: float = 1e-4):
    def deco(fn):
        REGISTRY[name] = Check(name, group, tol, lambda rng: fn(rng, tol))
        return fn
    return deco


def away(rng, shape, lo=0.2, hi=1.0):
    """Random values with magnitude in [lo, hi] and random sign."""
    return rng.uniform(lo, hi, shape) * rng.choice((-1.0, 1.0), shape)


def distinct(rng, shape):
    """A random permutation of well-separated values (no ties)."""
    n = int(np.prod(shape))
    return (rng.permutation(n).reshape(shape) - n / 2) * 0.1 + rng.uniform(-0.02, 0.02, shape)


def _unary(op):
    return lambda rng, tol: gradcheck(op, [away(rng, (3, 4))], tol=tol)


def _binary(op):
    return lambda rng, tol: gradcheck(op, [away(rng, (3, 4)), away(rng, (4,))], tol=tol)


for _name, _fn in {
    "add": T.add, "sub": T.sub, "mul": T.mul, "div": T.div,
}.items():
    register(_name)(_binary(_fn))

for _name, _fn in {
    "neg": T.neg, "relu": T.relu, "sigmoid": T.sigmoid, "exp": T.exp, "abs": T.abs,
    "log": lambda a: T.log(T.abs(a)),
    "power": lambda a: T.power(T.abs(a), 2.5),
    "clamp": lambda a: T.clamp(a, -0.5, 0.6),
    "sum": lambda a: T.sum(a, axis=1),
    "mean": lambda a: T.mean(a, axis=0, keepdims=True),
    "reshape": lambda a: T.reshape(a, (2, 6)) * T.Tensor(np.arange(12.0).reshape(2, 6)),
    "transpose": lambda a: T.transpose(a, (1, 0)) * T.Tensor(np.arange(12.0).reshape(4, 3)),
    "softmax": lambda a: T.softmax(a, axis=1),
    "take": lambda a: T.take(a, [2, 0, 2, 1], axis=1),
}.items():
    register(_name)(_unary(_fn))


@register("matmul")
def _matmul(rng, tol):
    return gradcheck(T.matmul, [away(rng, (2, 3, 4)), away(rng, (4, 5))], tol=tol)


@register("concat")
def _concat(rng, tol):
    return gradcheck(lambda a, b: T.concat([a, b], axis=1), [away(rng, (2, 3)), away(rng, (2, 2))], tol=tol)


@register("split")
def _split(rng, tol):
    def f(a):
        x, y = T.split(a, [1, 3], axis=1)
        return T.concat([y * 2.0, x * x], axis=1)
    return gradcheck(f, [away(rng, (2, 4))], tol=tol)


@register("conv2d")
def _conv2d(rng, tol):
    reports = [
        gradcheck(lambda x, w, b: ops.conv2d(x, w, b, padding=1),
                  [away(rng, (2, 3, 5, 5)), away(rng, (4, 3, 3, 3)), away(rng, (4,))], tol=tol),
        gradcheck(lambda x, w: ops.conv2d(x, w, stride=2, padding=1, groups=2),
                  [away(rng, (1, 4, 6, 6)), away(rng, (4, 2, 3, 3))], tol=tol),
    ]
    return _merge(reports)


@register("adaptive_max_pool")
def _maxpool(rng, tol):
    return gradcheck(lambda x: ops.adaptive_pool(x, 3, 2, "max"), [distinct(rng, (1, 2, 7, 5))], tol=tol)


@register("adaptive_avg_pool")
def _avgpool(rng, tol):
    return gradcheck(lambda x: ops.adaptive_pool(x, 3, 2, "avg"), [away(rng, (1, 2, 7, 5))], tol=tol)


@register("bilinear_resize")
def _resize(rng, tol):
    return _merge([gradcheck(lambda x: ops.bilinear_resize(x, 7, 3), [away(rng, (1, 2, 4, 6))], tol=tol),
                   gradcheck(lambda x: ops.bilinear_resize(x, 2, 3), [away(rng, (1, 1, 5, 6))], tol=tol)])


@register("batchnorm2d")
def _bn(rng, tol):
    def f(x, g, b):
        c = x.shape[1]
        return ops.batchnorm2d(x, g, b, np.zeros(c), np.ones(c), training=True)
    return gradcheck(f, [away(rng, (3, 2, 3, 3)), away(rng, (2,)), away(rng, (2,))], tol=tol)


@register("temporal_conv_circular")
def _tconv(rng, tol):
    return gradcheck(lambda x, w: ops.temporal_conv_circular(x, w, 3),
                     [away(rng, (6, 2, 4, 4)), away(rng, (2, 2, 3, 3, 3))], tol=tol)


@register("bce_logits")
def _bce(rng, tol):
    g = (rng.random((2, 1, 3, 3)) < 0.5).astype(float)
    return gradcheck(lambda z: bce_with_logits(z, g), [away(rng, (2, 1, 3, 3), 0.1, 3.0)], tol=tol)


@register("ual")
def _ual(rng, tol):
    p = rng.uniform(0.05, 0.95, (2, 5))
    p = np.where(np.abs(p - 0.5) < 0.05, 0.3, p)
    return _merge([gradcheck(lambda q: ual(q, "pow", 2.0), [p], tol=tol),
                   gradcheck(lambda q: ual(q, "pow", 1.5), [p], tol=tol),
                   gradcheck(lambda q: ual(q, "exp", 1.0), [p], tol=tol)])


def _module_check(module, f, inputs, tol, max_coords=6):
    module.astype(np.float64)
    return gradcheck(f, inputs, tol=tol, params=module.parameters(), max_coords=max_coords)


@register("mhsiu", group="mhsiu")
def _mhsiu(rng, tol):
    with precision(np.float64):
        unit = MHSIU(rng, channels=4, heads=2)
    feats = [away(rng, (2, 4, 4, 4)) for _ in range(3)]
    return _module_check(unit, lambda a, b, c: unit([a, b, c]), feats, tol)


@register("rgpu", group="rgpu")
def _rgpu(rng, tol):
    with precision(np.float64):
        unit = RGPU(rng, channels=4, groups=2, clip_len=2)
    x, above = away(rng, (4, 4, 4, 4)), away(rng, (4, 4, 2, 2))
    return _module_check(unit, lambda a, b: unit(a, b, clip_len=2), [x, above], tol)


MICRO = ModelConfig(encoder=EncoderConfig(levels=2, channels=4, widths=(4, 6)), heads=2, groups=2,
                    clip_len=2, input_side=32)


@register("model", group="model", tol=1e-3)
def _model(rng, tol):
    seed = int(rng.integers(2 ** 31))
    with precision(np.float64):
        net = Segmenter(MICRO, seed=seed)
    g = (rng.random((2, 1, 32, 32)) < 0.4).astype(float)

    def f(x):
        loss, _ = total_loss(net.logits(x, clip_len=2), g, LossConfig(), 0.5, 1.0)
        return loss
    return _module_check(net, f, [rng.uniform(0, 1, (2, 3, 32, 32))], tol, max_coords=3)


def _merge(reports: list[GradReport]) -> GradReport:
    failure = next((r.failure for r in reports if r.failure), None)
    return GradReport([e for r in reports for e in r.errors], [c for r in reports for c in r.checked],
                      failure=failure, tol=reports[0].tol)


def selected(module: str = "all") -> list[Check]:
    if module != "all" and module not in GROUPS:
        raise ValueError(f"unknown module {module!r}; choose from all, {', '.join(GROUPS)}")
    return [c for c in REGISTRY.values() if module == "all" or c.group == module]


def run_checks(module: str = "all", seed: int = 0) -> list[tuple[Check, GradReport]]:
    out = []
    for check in selected(module):
        rng = np.random.default_rng([seed, zlib.crc32(check.name.encode())])
        out.append((check, check.run(rng)))
    return out
