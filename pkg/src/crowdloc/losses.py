"""Density-map losses and the curriculum weighting, as plain numpy functions.

Every function accepts ``DensityMap``/``AttentionMap`` objects or raw 2-D arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate

from .errors import InvalidParameterError, ShapeError, ValidationError

ATT_EPS = 1e-12


def _arr(m) -> np.ndarray:
    a = np.asarray(getattr(m, "values", m), dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D map, got shape {a.shape}")
    return a


def _pair(pred, gt, index=None):
    p, g = _arr(pred), _arr(gt)
    if p.shape != g.shape:
        where = "" if index is None else f" at pair {index}"
        raise ShapeError(f"shape mismatch{where}: {p.shape} vs {g.shape}", index=index)
    return p, g


@dataclass(frozen=True)
class SsimConfig:
    kernel: str = "gaussian"
    size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.kernel not in ("gaussian", "uniform"):
            raise InvalidParameterError(f"unknown SSIM kernel {self.kernel!r}")
        if int(self.size) != self.size or self.size < 1 or self.size % 2 == 0:
            raise InvalidParameterError(f"kernel size must be odd, got {self.size}")
        if self.kernel == "gaussian" and not self.sigma > 0:
            raise InvalidParameterError("kernel sigma must be positive")
        if not (self.c1 > 0 and self.c2 > 0):
            raise InvalidParameterError("SSIM stabilizers must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    def window(self) -> np.ndarray:
        if self.kernel == "uniform":
            return np.full((self.size, self.size), 1.0 / self.size**2)
        r = np.arange(self.size) - self.size // 2
        g = np.exp(-(r**2) / (2 * self.sigma**2))
        w = np.outer(g, g)
        return w / w.sum()


@dataclass(frozen=True)
class CurriculumSchedule:
    k_e: float = 2e-3
    b_e: float = 5e-3

    def threshold(self, epoch: float) -> float:
        return self.k_e * epoch + self.b_e


@dataclass(frozen=True)
class LossWeights:
    lambda_att: float = 0.5

    def __post_init__(self):
        if not (np.isfinite(self.lambda_att) and self.lambda_att >= 0):
            raise InvalidParameterError("lambda_att must be finite and >= 0")


def _batch(preds, gts, weights=None):
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts):
        raise ShapeError(f"batch length mismatch: {len(preds)} predictions, {len(gts)} targets")
    if not preds:
        raise ShapeError("empty batch")
    if weights is not None:
        weights = list(weights)
        if len(weights) != len(preds):
            raise ShapeError(f"batch length mismatch: {len(weights)} weight grids")
    return preds, gts, weights


def mse_loss(preds, gts) -> float:
    """Batch mean of per-map mean squared error."""
    preds, gts, _ = _batch(preds, gts)
    total = 0.0
    for i, (pr, gt) in enumerate(zip(preds, gts)):
        p, g = _pair(pr, gt, i)
        total += float(np.mean((p - g) ** 2))
    return total / len(preds)


def weighted_mse_loss(preds, gts, weights) -> float:
    preds, gts, weights = _batch(preds, gts, weights)
    total = 0.0
    for i, (pr, gt, wt) in enumerate(zip(preds, gts, weights)):
        p, g = _pair(pr, gt, i)
        w = _arr(wt)
        if w.shape != p.shape:
            raise ShapeError(f"weight grid shape {w.shape} != map shape {p.shape} at pair {i}", index=i)
        total += float(np.mean((w * (p - g)) ** 2))
    return total / len(preds)


def pool2x2(a: np.ndarray, kind: str = "avg") -> np.ndarray:
    """2x2 stride-2 pooling; a trailing odd row/column forms a smaller window."""
    h, w = a.shape
    padded = np.full((h + h % 2, w + w % 2), np.nan)
    padded[:h, :w] = a
    blocks = padded.reshape(padded.shape[0] // 2, 2, padded.shape[1] // 2, 2)
    if kind == "max":
        return np.nanmax(blocks, axis=(1, 3))
    if kind == "avg":
        return np.nanmean(blocks, axis=(1, 3))
    raise InvalidParameterError(f"unknown pooling {kind!r}")


def sal_loss(pred, gt, levels: int = 3, pooling: str = "avg") -> float:
    """Sum of per-level MSE; level 1 is full resolution, each next level pools 2x2."""
    p, g = _pair(pred, gt)
    if int(levels) != levels or levels < 1:
        raise InvalidParameterError(f"levels must be >= 1, got {levels}")
    if pooling not in ("avg", "max"):
        raise InvalidParameterError(f"unknown pooling {pooling!r}")
    need = 2 ** (levels - 1)
    if min(p.shape) < need:
        raise InvalidParameterError(f"map {p.shape} too small for {levels} abstraction levels")
    total = 0.0
    for level in range(levels):
        if level:
            p, g = pool2x2(p, pooling), pool2x2(g, pooling)
        total += float(np.mean((p - g) ** 2))
    return total


def adaptive_avg_pool(a, k: int) -> np.ndarray:
    """k x k adaptive average pooling with floor-partitioned bin edges."""
    a = _arr(a)
    h, w = a.shape
    if k < 1 or k > min(h, w):
        raise InvalidParameterError(f"pool size {k} exceeds map {h}x{w}")
    rows = [(i * h) // k for i in range(k + 1)]
    cols = [(j * w) // k for j in range(k + 1)]
    out = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            out[i, j] = a[rows[i] : rows[i + 1], cols[j] : cols[j + 1]].mean()
    return out


def msdlc_loss(pred, gt, sizes=(1, 2, 4)) -> float:
    """Multi-scale density-level consistency: scaled L1 between pooled maps."""
    p, g = _pair(pred, gt)
    total = 0.0
    for k in sizes:
        if int(k) != k:
            raise InvalidParameterError(f"pool size must be an integer, got {k}")
        k = int(k)
        diff = np.abs(adaptive_avg_pool(p, k) - adaptive_avg_pool(g, k)).sum()
        total += float(diff) / k**2
    return total


def ssim_map(pred, gt, cfg: SsimConfig = SsimConfig()) -> np.ndarray:
    p, g = _pair(pred, gt)
    if min(p.shape) < cfg.size:
        raise InvalidParameterError(f"map {p.shape} smaller than {cfg.size}x{cfg.size} kernel")
    w = cfg.window()

    def local(a):
        # 'reflect' mirrors about the edge, repeating the border pixel
        return correlate(a, w, mode="reflect")

    mu_p, mu_g = local(p), local(g)
    var_p = local(p * p) - mu_p**2
    var_g = local(g * g) - mu_g**2
    cov = local(p * g) - mu_p * mu_g
    c1, c2 = cfg.c1, cfg.c2
    return ((2 * mu_p * mu_g + c1) * (2 * cov + c2)) / (
        (mu_p**2 + mu_g**2 + c1) * (var_p + var_g + c2)
    )


def ssim_loss(pred, gt, cfg: SsimConfig = SsimConfig()) -> float:
    return 1.0 - float(ssim_map(pred, gt, cfg).mean())


def attention_loss(pred_att, gt_att) -> float:
    """Pixel-mean binary cross-entropy between predicted and target masks."""
    p, g = _pair(pred_att, gt_att)
    if not np.all((g == 0) | (g == 1)):
        raise ValidationError("ground-truth attention values must be 0 or 1")
    if not np.all((p >= 0) & (p <= 1)):
        raise ValidationError("predicted attention values must lie in [0, 1]")
    p = np.clip(p, ATT_EPS, 1 - ATT_EPS)
    return float(-np.mean(g * np.log(p) + (1 - g) * np.log1p(-p)))


def total_loss(pred, gt, pred_att, gt_att, weights: LossWeights = LossWeights()) -> float:
    return (
        mse_loss([pred], [gt])
        + msdlc_loss(pred, gt)
        + weights.lambda_att * attention_loss(pred_att, gt_att)
    )


def curriculum_weights(gt, epoch: float, sched: CurriculumSchedule = CurriculumSchedule()) -> np.ndarray:
    """Per-pixel weight T(e) / max(M, T(e)); dense pixels are down-weighted early."""
    if epoch < 0:
        raise InvalidParameterError(f"epoch must be >= 0, got {epoch}")
    t = sched.threshold(epoch)
    if not t > 0:
        raise InvalidParameterError(f"threshold T({epoch}) = {t} is not positive")
    m = _arr(gt)
    return t / np.maximum(m, t)
