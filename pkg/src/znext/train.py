"""Adam training loop with step decay, augmentation and the UAL schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.ndimage import rotate

from . import ops
from .data import Sample
from .losses import total_loss
from .model import ModelConfig, Segmenter
from .tensor import NonFiniteError, Tensor, backward, no_grad


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, detail: str = ""):
        super().__init__(f"non-finite loss at step {step}" + (f": {detail}" if detail else ""))
        self.step = step


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data = (p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


def lr_at(epoch: int, cfg: ModelConfig) -> float:
    """Step decay: ``decay_factor`` every ceil(epochs / 3) epochs (0-based epoch)."""
    period = max(1, math.ceil(cfg.epochs / 3))
    return cfg.lr * cfg.decay_factor ** (epoch // period)


def augment(frames: np.ndarray, masks: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Flip (p = 0.5), rotate within +-10 degrees and jitter brightness and
    contrast by up to 10 %; one draw per sample, shared by all its frames."""
    if rng.random() < 0.5:
        frames, masks = frames[..., ::-1], masks[..., ::-1]
    angle = rng.uniform(-10, 10)
    brightness = rng.uniform(0.9, 1.1)
    contrast = rng.uniform(0.9, 1.1)
    frames = rotate(frames, angle, axes=(2, 3), reshape=False, order=1, mode="reflect")
    masks = rotate(masks, angle, axes=(2, 3), reshape=False, order=0, mode="constant", cval=0.0)
    mean = frames.mean(axis=(1, 2, 3), keepdims=True)
    frames = np.clip((frames - mean) * contrast + mean * brightness, 0, 1)
    return frames.astype(np.float32), masks.astype(np.float32)


def resize_sample(sample: Sample, side: int) -> Sample:
    """Bilinear resize of frames (and masks, re-binarized) to ``side``."""
    if sample.frames.shape[2:] == (side, side):
        return sample
    with no_grad():
        frames = ops.bilinear_resize(Tensor(sample.frames.astype(np.float32)), side, side).data
        masks = ops.bilinear_resize(Tensor(sample.masks.astype(np.float32)), side, side).data
    return Sample(frames.astype(np.float32), (masks >= 0.5).astype(np.float32), sample.names)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    lam: float
    lr: float


@dataclass
class TrainResult:
    model: Segmenter
    epochs: list[EpochLog] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)


def steps_per_epoch(n_samples: int, batch_size: int) -> int:
    return math.ceil(n_samples / batch_size)


def train(dataset: list[Sample], cfg: ModelConfig, seed: int | None = None,
          on_epoch: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Train from scratch; deterministic given ``seed`` (defaults to cfg.seed).

    Batches count samples, i.e. clips when cfg.clip_len > 1.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    seed = cfg.seed if seed is None else seed
    t = cfg.clip_len
    for s in dataset:
        if s.clip_len != t:
            raise ValueError(f"sample {s.names[0]} has {s.clip_len} frames, config expects T={t}")
    dataset = [resize_sample(s, cfg.input_side) for s in dataset]
    rng = np.random.default_rng(seed)
    model = Segmenter(cfg, seed=seed)
    model.train()
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr, betas=cfg.betas)
    per_epoch = steps_per_epoch(len(dataset), cfg.batch_size)
    total = cfg.epochs * per_epoch
    clip_len = t if t > 1 else None
    result = TrainResult(model)
    step = 0
    for epoch in range(cfg.epochs):
        opt.lr = lr_at(epoch, cfg)
        order = rng.permutation(len(dataset))
        losses, lam = [], 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [dataset[i] for i in order[start:start + cfg.batch_size]]
            pairs = [augment(s.frames, s.masks, rng) if cfg.augment else (s.frames, s.masks) for s in batch]
            x = np.concatenate([f for f, _ in pairs])
            g = np.concatenate([m for _, m in pairs])
            model.zero_grad()
            try:
                logits = model.logits(Tensor(x), clip_len)
                loss, parts = total_loss(logits, g, cfg.loss, step, total)
                if not np.isfinite(loss.item()):
                    raise TrainingDiverged(step)
                backward(loss)
            except NonFiniteError as exc:
                raise TrainingDiverged(step, str(exc)) from None
            opt.step()
            step += 1
            losses.append(loss.item())
            lam = parts["lambda"]
        entry = EpochLog(epoch, float(np.mean(losses)), lam, opt.lr)
        result.epochs.append(entry)
        result.step_losses.extend(losses)
        if on_epoch:
            on_epoch(entry)
    model.eval()
    return result
