"""Localization AP over delta-sized windows, and counting MAE/RMSE."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError

DEFAULT_DELTAS = (10, 20, 40)


@dataclass(frozen=True)
class EvalConfig:
    deltas: tuple = DEFAULT_DELTAS
    iou_threshold: float = 0.5

    def __post_init__(self):
        if not self.deltas or any(d < 1 for d in self.deltas):
            raise InvalidParameterError(f"window sizes must be >= 1, got {self.deltas}")
        if not 0 < self.iou_threshold <= 1:
            raise InvalidParameterError(f"IoU threshold must lie in (0, 1], got {self.iou_threshold}")


@dataclass
class MatchReport:
    delta: float
    # per ranked prediction: (prediction index, matched gt index or None)
    outcomes: list = field(default_factory=list)
    precision: list = field(default_factory=list)
    recall: list = field(default_factory=list)
    ap: float = 0.0

    @property
    def tp(self) -> int:
        return sum(g is not None for _, g in self.outcomes)


def window_iou(p, q, delta: float) -> float:
    """IoU of the two axis-aligned delta x delta squares centered at p and q."""
    ix = max(0.0, delta - abs(p[0] - q[0]))
    iy = max(0.0, delta - abs(p[1] - q[1]))
    inter = ix * iy
    return inter / (2.0 * delta * delta - inter)


def rank_predictions(centers: np.ndarray) -> np.ndarray:
    """Indices by descending mass; ties by lower x, then lower y."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    return np.lexsort((centers[:, 1], centers[:, 0], -centers[:, 2]))


def match_one(centers, gt_points, delta: float, iou_threshold: float = 0.5) -> MatchReport:
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt_points, dtype=np.float64).reshape(-1, 2)
    n_gt = len(gt)
    report = MatchReport(delta)
    used = np.zeros(n_gt, dtype=bool)
    tp = 0
    ap_sum = 0.0
    for k, i in enumerate(rank_predictions(centers), start=1):
        match = None
        if not used.all():
            d2 = ((gt - centers[i, :2]) ** 2).sum(axis=1)
            d2[used] = np.inf
            j = int(np.argmin(d2))
            if window_iou(centers[i, :2], gt[j], delta) >= iou_threshold:
                used[j] = True
                match = j
        report.outcomes.append((int(i), match))
        if match is not None:
            tp += 1
            ap_sum += tp / k
        report.precision.append(tp / k)
        report.recall.append(tp / n_gt if n_gt else 1.0)
    if n_gt == 0:
        report.ap = 1.0 if len(centers) == 0 else 0.0
    else:
        report.ap = ap_sum / n_gt
    return report


def match_and_ap(result, gt, cfg: EvalConfig = EvalConfig()) -> dict:
    """Map each window size in ``cfg.deltas`` to its ``MatchReport``.

    ``result`` may be a ``LocalizationResult`` or an (n, 3) array of
    ``(x, y, mass)``; ``gt`` an ``AnnotationSet`` or an (m, 2) array.
    """
    centers = getattr(result, "centers", result)
    points = getattr(gt, "points", gt)
    return {d: match_one(centers, points, d, cfg.iou_threshold) for d in cfg.deltas}


def counting_metrics(pairs):
    """``(MAE, RMSE)`` over ``(estimated, true)`` count pairs."""
    pairs = list(pairs)
    if not pairs:
        raise InvalidParameterError("counting metrics need at least one pair")
    err = np.abs(np.array([float(e) - float(t) for e, t in pairs]))
    scale = err.max()
    if scale == 0:
        return 0.0, 0.0
    # scaled so tiny errors do not underflow when squared
    return float(np.mean(err)), float(scale * math.sqrt(np.mean((err / scale) ** 2)))
