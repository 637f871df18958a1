"""Segmentation quality measures for probability maps against binary masks.

All functions take a prediction ``p`` in [0, 1] and a binary mask ``g`` of the
same 2-D shape and work in float64.  Threshold curves use the 8-bit quantized
prediction ``floor(p * 255)`` binarized with ``q >= t`` for t = 0..255.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields

import numpy as np

EPS = np.spacing(1.0)
N_THRESHOLDS = 256
BETA2 = 0.3


def _prepare(p, g) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g)
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {p.shape} != mask shape {g.shape}")
    if p.size and (p.min() < 0 or p.max() > 1):
        raise ValueError("prediction values must lie in [0, 1]")
    return p, g > 0.5 if g.dtype != bool else g


def quantize(p: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(p, dtype=np.float64) * 255).astype(np.int64)


def mae(p, g) -> float:
    p, g = _prepare(p, g)
    return float(np.mean(np.abs(p - g)))


def _f_from_pr(precision, recall, beta2):
    precision, recall = np.asarray(precision, float), np.asarray(recall, float)
    num = (1 + beta2) * precision * recall
    den = beta2 * precision + recall
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def _confusion(pred: np.ndarray, g: np.ndarray) -> tuple[int, int, int]:
    tp = int(np.count_nonzero(pred & g))
    fp = int(np.count_nonzero(pred & ~g))
    fn = int(np.count_nonzero(~pred & g))
    return tp, fp, fn


def f_beta(p, g, threshold: float = 0.5, beta2: float = BETA2) -> float:
    """F-measure of ``p >= threshold``; 0 when precision and recall vanish."""
    p, g = _prepare(p, g)
    tp, fp, fn = _confusion(p >= threshold, g)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return float(_f_from_pr(precision, recall, beta2))


def _threshold_counts(p: np.ndarray, g: np.ndarray):
    """Per threshold t = 0..255: predicted-positive counts inside and outside g."""
    q = quantize(p)
    fg_hist = np.bincount(q[g], minlength=N_THRESHOLDS)
    bg_hist = np.bincount(q[~g], minlength=N_THRESHOLDS)
    # count of q >= t is the reversed cumulative sum
    tp = np.cumsum(fg_hist[::-1])[::-1].astype(np.float64)
    fp = np.cumsum(bg_hist[::-1])[::-1].astype(np.float64)
    return tp, fp


def pr_curve(p, g) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall for thresholds 0..255 (ascending)."""
    p, g = _prepare(p, g)
    tp, fp = _threshold_counts(p, g)
    n_pos = np.count_nonzero(g)
    pred = tp + fp
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = tp / n_pos if n_pos else np.zeros_like(tp)
    return precision, recall


def f_curve(p, g, beta2: float = BETA2) -> np.ndarray:
    return _f_from_pr(*pr_curve(p, g), beta2)


def max_f(p, g, beta2: float = BETA2) -> float:
    return float(f_curve(p, g, beta2).max())


def m_dice(p, g, threshold: float = 0.5) -> float:
    """Dice of ``p >= threshold``; a leading frame axis is averaged over."""
    p, g = _prepare(p, g)
    if p.ndim == 3:
        return float(np.mean([m_dice(pf, gf, threshold) for pf, gf in zip(p, g)]))
    tp, fp, fn = _confusion(p >= threshold, g)
    den = 2 * tp + fp + fn
    return 2 * tp / den if den else 1.0


def m_iou(p, g, threshold: float = 0.5) -> float:
    p, g = _prepare(p, g)
    if p.ndim == 3:
        return float(np.mean([m_iou(pf, gf, threshold) for pf, gf in zip(p, g)]))
    tp, fp, fn = _confusion(p >= threshold, g)
    den = tp + fp + fn
    return tp / den if den else 1.0


# structure measure

def _object_similarity(x: np.ndarray) -> float:
    mu = x.mean()
    sigma = x.std(ddof=1) if x.size > 1 else 0.0
    return 2 * mu / (mu * mu + 1 + sigma + EPS)


def _object_score(p: np.ndarray, g: np.ndarray) -> float:
    u = g.mean()
    return u * _object_similarity(p[g]) + (1 - u) * _object_similarity(1 - p[~g])


def _ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    if n == 0:
        return 0.0
    x, y = p.mean(), g.mean()
    if n > 1:
        sx = np.sum((p - x) ** 2) / (n - 1)
        sy = np.sum((g - y) ** 2) / (n - 1)
        sxy = np.sum((p - x) * (g - y)) / (n - 1)
    else:
        sx = sy = sxy = 0.0
    a = 4 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0:
        return a / (b + EPS)
    return 1.0 if b == 0 else 0.0


def centroid(g: np.ndarray) -> tuple[int, int]:
    """Split point (row, col): the rounded 1-based centroid of ``g``."""
    h, w = g.shape
    if not g.any():
        return int(math.floor(h / 2 + 0.5)), int(math.floor(w / 2 + 0.5))
    rows, cols = np.nonzero(g)
    # round half away from zero on 1-based coordinates
    return int(math.floor(rows.mean() + 1.5)), int(math.floor(cols.mean() + 1.5))


def _region_score(p: np.ndarray, g: np.ndarray) -> float:
    h, w = g.shape
    y, x = centroid(g)
    gf = g.astype(np.float64)
    area = h * w
    w1, w2, w3 = x * y / area, y * (w - x) / area, (h - y) * x / area
    weights = (w1, w2, w3, 1 - w1 - w2 - w3)
    quads = ((slice(0, y), slice(0, x)), (slice(0, y), slice(x, w)),
             (slice(y, h), slice(0, x)), (slice(y, h), slice(x, w)))
    return sum(wt * _ssim(p[q], gf[q]) for wt, q in zip(weights, quads) if wt > 0)


def s_measure(p, g, alpha: float = 0.5) -> float:
    """Structure measure: object-aware plus region-aware similarity."""
    p, g = _prepare(p, g)
    y = g.mean()
    if y == 0:
        return float(1 - p.mean())
    if y == 1:
        return float(p.mean())
    score = alpha * _object_score(p, g) + (1 - alpha) * _region_score(p, g)
    return float(max(score, 0.0))


# enhanced alignment measure

def e_curve(p, g) -> np.ndarray:
    """Enhanced-alignment score for each threshold 0..255."""
    p, g = _prepare(p, g)
    n = g.size
    n_fg = np.count_nonzero(g)
    tp, fp = _threshold_counts(p, g)
    pred_fg = tp + fp
    if n_fg == 0:
        return (n - pred_fg) / n
    if n_fg == n:
        return pred_fg / n
    mean_p = pred_fg / n
    mean_g = n_fg / n
    parts = (
        (tp, 1 - mean_p, 1 - mean_g),
        (fp, 1 - mean_p, -mean_g),
        (n_fg - tp, -mean_p, 1 - mean_g),
        (n - n_fg - fp, -mean_p, -mean_g),
    )
    total = np.zeros(N_THRESHOLDS)
    for count, a, b in parts:
        align = 2 * a * b / (a * a + b * b + EPS)
        total += count * (align + 1) ** 2 / 4
    return total / n


def e_measure(p, g) -> tuple[float, np.ndarray]:
    """Mean enhanced-alignment score over thresholds and the full curve."""
    curve = e_curve(p, g)
    return float(curve.mean()), curve


# weighted F-measure

def gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    k = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma * sigma))
    return k / k.sum()


def nearest_foreground(g: np.ndarray, chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Euclidean distance to the nearest foreground pixel and its flat index.

    Ties go to the lowest row-major index.  Only foreground pixels with a
    background 4-neighbour can be nearest to a background pixel, so the
    search runs over those.
    """
    h, w = g.shape
    if not g.any():
        raise ValueError("distance transform needs a foreground pixel")
    padded = np.pad(g, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
    cand = np.flatnonzero(g & ~interior)
    cy, cx = np.divmod(cand, w)
    dist = np.zeros(g.size)
    index = np.arange(g.size)
    bg = np.flatnonzero(~g)
    for start in range(0, bg.size, chunk):
        sel = bg[start:start + chunk]
        py, px = np.divmod(sel, w)
        d2 = (py[:, None] - cy[None, :]) ** 2 + (px[:, None] - cx[None, :]) ** 2
        best = np.argmin(d2, axis=1)  # first minimum is the lowest index
        dist[sel] = np.sqrt(d2[np.arange(sel.size), best])
        index[sel] = cand[best]
    return dist.reshape(h, w), index.reshape(h, w)


def _filter_same(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Zero-padded 'same' correlation."""
    r = k.shape[0] // 2
    xp = np.pad(x, r)
    h, w = x.shape
    out = np.zeros_like(x)
    for i in range(k.shape[0]):
        for j in range(k.shape[1]):
            out += k[i, j] * xp[i:i + h, j:j + w]
    return out


@dataclass
class WeightedF:
    value: float
    empty_gt: bool = False


def weighted_f_detail(p, g, beta2: float = 1.0) -> WeightedF:
    p, g = _prepare(p, g)
    if not g.any():
        return WeightedF(0.0, empty_gt=True)
    gf = g.astype(np.float64)
    err = np.abs(p - gf)
    dist, idx = nearest_foreground(g)
    # background errors take the error of their nearest foreground pixel
    et = err.ravel()[idx.ravel()].reshape(err.shape)
    ea = _filter_same(et, gaussian_kernel())
    min_e = np.where(g & (ea < err), ea, err)
    importance = np.where(g, 1.0, 2.0 - np.exp(np.log(0.5) / 5 * dist))
    ew = min_e * importance
    tpw = gf.sum() - ew[g].sum()
    fpw = ew[~g].sum()
    recall = 1 - ew[g].mean()
    prec = tpw / (EPS + tpw + fpw)
    return WeightedF(float((1 + beta2) * recall * prec / (EPS + recall + beta2 * prec)))


def weighted_f(p, g, beta2: float = 1.0) -> float:
    """Dependency-weighted F-measure; 0 for an all-empty mask."""
    return weighted_f_detail(p, g, beta2).value


# reports

SCALARS = ("s_measure", "weighted_f", "mae", "max_f", "mean_e", "m_dice", "m_iou")


@dataclass
class MetricsReport:
    s_measure: float
    weighted_f: float
    mae: float
    max_f: float
    mean_e: float
    m_dice: float
    m_iou: float
    pr_curve: np.ndarray = field(repr=False)
    f_curve: np.ndarray = field(repr=False)
    e_curve: np.ndarray = field(repr=False)
    warnings: tuple[str, ...] = ()

    def scalars(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in SCALARS}


def evaluate(p, g) -> MetricsReport:
    """All measures for one prediction/mask pair."""
    p, g = _prepare(p, g)
    precision, recall = pr_curve(p, g)
    fc = _f_from_pr(precision, recall, BETA2)
    mean_e, ec = e_measure(p, g)
    wf = weighted_f_detail(p, g)
    return MetricsReport(
        s_measure=s_measure(p, g), weighted_f=wf.value, mae=mae(p, g),
        max_f=float(fc.max()), mean_e=mean_e, m_dice=m_dice(p, g), m_iou=m_iou(p, g),
        pr_curve=np.stack([precision, recall], axis=1), f_curve=fc, e_curve=ec,
        warnings=("empty mask: weighted_f set to 0",) if wf.empty_gt else (),
    )


def aggregate(reports: list[MetricsReport]) -> MetricsReport:
    """Dataset score: per-item values averaged (curves pointwise)."""
    if not reports:
        raise ValueError("no reports to aggregate")
    vals = {f.name: np.mean([getattr(r, f.name) for r in reports], axis=0)
            for f in fields(MetricsReport) if f.name != "warnings"}
    for k in SCALARS:
        vals[k] = float(vals[k])
    return MetricsReport(**vals)


def write_report_csv(path, names: list[str], reports: list[MetricsReport]) -> MetricsReport:
    summary = aggregate(reports)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(("name",) + SCALARS)
        for name, r in zip(names, reports):
            out.writerow([name] + [repr(v) for v in r.scalars().values()])
        out.writerow(["mean"] + [repr(v) for v in summary.scalars().values()])
    return summary


def write_curves_csv(path, report: MetricsReport):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(("threshold", "precision", "recall", "f_beta", "e_measure"))
        for t in range(N_THRESHOLDS):
            out.writerow([t, repr(float(report.pr_curve[t, 0])), repr(float(report.pr_curve[t, 1])),
                          repr(float(report.f_curve[t])), repr(float(report.e_curve[t]))])
