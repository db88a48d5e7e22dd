"""Seeded crop planning and the quarter split used for patch-wise validation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, InvalidParameterError
from .grid import AnnotationSet, DensityMap

MIXED_RATIOS = (0.3, 0.4, 0.5, 0.6, 0.7)


@dataclass(frozen=True)
class CropRect:
    x: int
    y: int
    w: int
    h: int

    def fits(self, width: int, height: int) -> bool:
        return (
            self.x >= 0 and self.y >= 0 and self.w >= 1 and self.h >= 1
            and self.x + self.w <= width and self.y + self.h <= height
        )

    def as_tuple(self):
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class CropStrategy:
    """One of ``random``, ``fixed_quarters``, ``fixed_plus_random`` or ``mixed``."""

    kind: str
    ratio: float = 0.5
    extra_count: int = 5
    ratio_set: tuple = MIXED_RATIOS
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("random", "fixed_quarters", "fixed_plus_random", "mixed"):
            raise InvalidParameterError(f"unknown crop strategy {self.kind!r}")
        if not 0 < self.ratio <= 1:
            raise InvalidParameterError(f"ratio must lie in (0, 1], got {self.ratio}")
        if self.extra_count < 0:
            raise InvalidParameterError("extra_count must be >= 0")
        if not self.ratio_set or not all(0 < r <= 1 for r in self.ratio_set):
            raise InvalidParameterError(f"bad ratio set {self.ratio_set}")

    @classmethod
    def random(cls, ratio, seed=0):
        return cls("random", ratio=ratio, seed=seed)

    @classmethod
    def fixed_quarters(cls):
        return cls("fixed_quarters")

    @classmethod
    def fixed_plus_random(cls, ratio=0.5, extra_count=5, seed=0):
        return cls("fixed_plus_random", ratio=ratio, extra_count=extra_count, seed=seed)

    @classmethod
    def mixed(cls, ratio_set=MIXED_RATIOS, seed=0):
        return cls("mixed", ratio_set=tuple(ratio_set), seed=seed)


def split_quarters(width: int, height: int) -> list:
    """Four disjoint rects tiling the frame; bottom/right absorb odd remainders."""
    if width < 2 or height < 2:
        raise InvalidParameterError(f"frame {width}x{height} too small to quarter")
    lw, th = width // 2, height // 2
    rw, bh = width - lw, height - th
    return [
        CropRect(0, 0, lw, th),
        CropRect(lw, 0, rw, th),
        CropRect(0, th, lw, bh),
        CropRect(lw, th, rw, bh),
    ]


def _random_rect(rng, width, height, ratio):
    w, h = math.floor(ratio * width), math.floor(ratio * height)
    if w < 1 or h < 1:
        raise InvalidParameterError(f"ratio {ratio} gives an empty crop on {width}x{height}")
    x = int(rng.integers(0, width - w + 1))
    y = int(rng.integers(0, height - h + 1))
    return CropRect(x, y, w, h)


def plan_crops(width: int, height: int, strategy: CropStrategy) -> list:
    rng = np.random.default_rng(strategy.seed)
    if strategy.kind == "random":
        return [_random_rect(rng, width, height, strategy.ratio)]
    if strategy.kind == "mixed":
        ratio = strategy.ratio_set[int(rng.integers(0, len(strategy.ratio_set)))]
        return [_random_rect(rng, width, height, ratio)]
    rects = split_quarters(width, height)
    if strategy.kind == "fixed_plus_random":
        rects += [_random_rect(rng, width, height, strategy.ratio) for _ in range(strategy.extra_count)]
    return rects


def _check(rect: CropRect, width: int, height: int):
    if not rect.fits(width, height):
        raise BoundsError(f"crop {rect.as_tuple()} outside frame {width}x{height}")


def crop_map(dmap: DensityMap, rect: CropRect) -> DensityMap:
    _check(rect, dmap.width, dmap.height)
    return DensityMap(dmap.values[rect.y : rect.y + rect.h, rect.x : rect.x + rect.w])


def crop_annotations(ann: AnnotationSet, rect: CropRect) -> AnnotationSet:
    _check(rect, ann.width, ann.height)
    p = ann.points
    keep = (
        (p[:, 0] >= rect.x) & (p[:, 0] < rect.x + rect.w)
        & (p[:, 1] >= rect.y) & (p[:, 1] < rect.y + rect.h)
    )
    return AnnotationSet(rect.w, rect.h, p[keep] - [rect.x, rect.y])


def aggregate_patch_counts(counts) -> float:
    return float(sum(counts))


def patch_count(dmap: DensityMap) -> float:
    """Whole-image count as the sum of the four quarter counts."""
    return aggregate_patch_counts(
        float(crop_map(dmap, r).values.sum()) for r in split_quarters(dmap.width, dmap.height)
    )
