"""Binary cross entropy, the uncertainty-awareness loss family and its schedules."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .tensor import Tensor, abs, as_tensor, clamp, exp, log, mean, power, record, sigmoid

UAL_FORMS = ("pow", "exp", "weighted-bce", "none")
SCHEDULES = ("cosine", "linear", "constant")
BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    ual_form: str = "pow"
    alpha: float = 2.0
    schedule: str = "cosine"
    t_min: float = 0.0
    t_max: float = 1.0
    lambda_min: float = 0.0
    lambda_max: float = 1.0
    lambda_const: float = 1.0

    def __post_init__(self):
        if self.ual_form not in UAL_FORMS:
            raise ValueError(f"unknown UAL form {self.ual_form!r}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not (0 <= self.t_min < self.t_max <= 1):
            raise ValueError(f"need 0 <= t_min < t_max <= 1, got {self.t_min}, {self.t_max}")

    @property
    def experimental(self) -> bool:
        # fractional pow exponents have an unbounded slope at p = 0.5 and train unreliably
        return self.ual_form == "pow" and self.alpha < 1


def _check_shapes(p: Tensor, g) -> np.ndarray:
    g = np.asarray(g.data if isinstance(g, Tensor) else g, dtype=p.dtype)
    if g.shape != p.shape:
        raise ValueError(f"prediction shape {p.shape} != mask shape {g.shape}")
    return g


def bce(p, g) -> Tensor:
    """Mean BCE of probabilities clamped to [eps, 1 - eps]."""
    p = as_tensor(p)
    g = _check_shapes(p, g)
    pc = clamp(p, BCE_EPS, 1 - BCE_EPS)
    return mean(-(log(pc) * g + log(1 - pc) * (1 - g)))


def bce_per_pixel_logits(z: Tensor, g) -> Tensor:
    """Per-pixel BCE from logits: max(z, 0) - z g + log(1 + exp(-|z|))."""
    z = as_tensor(z)
    g = _check_shapes(z, g)
    zd = z.data
    out = np.maximum(zd, 0) - zd * g + np.log1p(np.exp(-np.abs(zd)))
    return record("bce_logits", out, (z,), lambda grad: (grad * (expit(zd) - g),))


def bce_with_logits(z: Tensor, g) -> Tensor:
    return mean(bce_per_pixel_logits(z, g))


def delta(p) -> Tensor:
    """Certainty |2p - 1|."""
    return abs(as_tensor(p) * 2.0 - 1.0)


def ual_map(p, form: str = "pow", alpha: float = 2.0) -> Tensor:
    """Per-pixel ambiguity: 1 - |2p-1|**alpha (pow) or exp(-(alpha (p - 0.5))**2) (exp)."""
    p = as_tensor(p)
    if form == "pow":
        return 1.0 - power(delta(p), alpha)
    if form == "exp":
        u = (p - 0.5) * alpha
        return exp(-(u * u))
    raise ValueError(f"unknown UAL form {form!r}")


def ual(p, form: str = "pow", alpha: float = 2.0) -> Tensor:
    return mean(ual_map(p, form, alpha))


def weighted_bce(p, g, alpha: float = 2.0) -> Tensor:
    """BCE weighted per pixel by the constant 1 + ambiguity(p)."""
    p = as_tensor(p)
    weight = 1.0 + (1.0 - np.abs(2 * p.data - 1) ** alpha)
    pc = clamp(p, BCE_EPS, 1 - BCE_EPS)
    g = _check_shapes(p, g)
    return mean(-(log(pc) * g + log(1 - pc) * (1 - g)) * weight)


def lambda_at(t: float, total: float, cfg: LossConfig = LossConfig()) -> float:
    """UAL weight at step ``t`` of ``total``."""
    if cfg.schedule == "constant":
        return cfg.lambda_const
    lo, hi = cfg.t_min * total, cfg.t_max * total
    if t <= lo:
        return cfg.lambda_min
    if t >= hi:
        return cfg.lambda_max
    frac = (t - lo) / (hi - lo)
    if cfg.schedule == "cosine":
        frac = 0.5 * (1 - math.cos(frac * math.pi))
    return cfg.lambda_min + frac * (cfg.lambda_max - cfg.lambda_min)


def total_loss(logits: Tensor, g, cfg: LossConfig, t: float, total: float) -> tuple[Tensor, dict]:
    """Training objective from logits; returns the loss and its logged parts."""
    if cfg.ual_form == "weighted-bce":
        p = sigmoid(logits)
        weight = 1.0 + (1.0 - np.abs(2 * p.data - 1) ** cfg.alpha)
        loss = mean(bce_per_pixel_logits(logits, g) * weight)
        return loss, {"bce": loss.item(), "ual": 0.0, "lambda": 0.0}
    base = bce_with_logits(logits, g)
    if cfg.ual_form == "none":
        return base, {"bce": base.item(), "ual": 0.0, "lambda": 0.0}
    lam = lambda_at(t, total, cfg)
    amb = ual(sigmoid(logits), cfg.ual_form, cfg.alpha)
    loss = base + amb * lam if lam else base
    return loss, {"bce": base.item(), "ual": amb.item(), "lambda": lam}
