"""Ground-truth density maps, attention masks and seeded synthetic scenes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidParameterError, ValidationError
from .grid import AnnotationSet, DensityMap, _frozen


@dataclass(frozen=True)
class SigmaPolicy:
    mode: str = "adaptive"
    fixed_sigma: float = 15.0
    beta: float = 0.3
    k_neighbors: int = 3
    fallback_sigma: float = 15.0

    def __post_init__(self):
        if self.mode not in ("fixed", "adaptive"):
            raise InvalidParameterError(f"unknown sigma mode {self.mode!r}")
        if not self.fixed_sigma > 0:
            raise InvalidParameterError("fixed_sigma must be positive")
        if not self.beta > 0:
            raise InvalidParameterError("beta must be positive")
        if int(self.k_neighbors) != self.k_neighbors or self.k_neighbors < 1:
            raise InvalidParameterError("k_neighbors must be an integer >= 1")
        if not self.fallback_sigma > 0:
            raise InvalidParameterError("fallback_sigma must be positive")

    @classmethod
    def fixed(cls, sigma: float = 15.0) -> "SigmaPolicy":
        return cls(mode="fixed", fixed_sigma=sigma)


@dataclass(frozen=True, eq=False)
class AttentionMap:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.size == 0:
            raise ValidationError(f"attention map must be a non-empty 2-D grid, got shape {v.shape}")
        v = _frozen(v)
        if not np.all((v >= 0) & (v <= 1)):
            raise ValidationError("attention values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, AttentionMap):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None


def adaptive_sigmas(ann: AnnotationSet, policy: SigmaPolicy = SigmaPolicy()) -> np.ndarray:
    """Per-head sigma = beta * mean distance to the k nearest other heads.

    Heads with fewer than ``k_neighbors`` other heads get ``fallback_sigma``.
    """
    n = ann.n
    if n == 0:
        return np.zeros(0)
    k = policy.k_neighbors
    if n - 1 < k:
        return np.full(n, float(policy.fallback_sigma))
    # distances are what matter; which of several equidistant neighbours is
    # reported does not change the mean
    dist, _ = cKDTree(ann.points).query(ann.points, k=k + 1)
    return policy.beta * dist[:, 1:].mean(axis=1)


def _snap(coord: float, size: int) -> int:
    return min(int(math.floor(coord + 0.5)), size - 1)


def _gauss_1d(center: int, sigma: float, radius: int, size: int):
    lo = max(center - radius, 0)
    hi = min(center + radius, size - 1)
    offs = np.arange(lo, hi + 1) - center
    return lo, hi + 1, np.exp(-0.5 * (offs / sigma) ** 2)


def _sigmas_for(ann: AnnotationSet, policy: SigmaPolicy) -> np.ndarray:
    if policy.mode == "fixed":
        return np.full(ann.n, float(policy.fixed_sigma))
    return adaptive_sigmas(ann, policy)


def generate_density_map(ann: AnnotationSet, policy: SigmaPolicy = SigmaPolicy()) -> DensityMap:
    """Superimpose one normalized Gaussian per head.

    Each kernel is truncated to a square of half-width ceil(3 sigma), clipped
    to the frame and renormalized, so every head adds exactly 1 to the sum.
    """
    out = np.zeros((ann.height, ann.width))
    sigmas = _sigmas_for(ann, policy)
    for (x, y), sigma in zip(ann.points, sigmas):
        cx, cy = _snap(x, ann.width), _snap(y, ann.height)
        if sigma <= 0:
            # coincident neighbours give sigma 0: the kernel degenerates to a delta
            out[cy, cx] += 1.0
            continue
        r = int(math.ceil(3 * sigma))
        x0, x1, gx = _gauss_1d(cx, sigma, r, ann.width)
        y0, y1, gy = _gauss_1d(cy, sigma, r, ann.height)
        # separable kernel on a rectangle: its sum is the product of the 1-D sums
        out[y0:y1, x0:x1] += np.outer(gy / gy.sum(), gx / gx.sum())
    return DensityMap(out)


def generate_attention_window(ann: AnnotationSet, window: int = 25) -> AttentionMap:
    if int(window) != window or window < 1 or window % 2 == 0:
        raise InvalidParameterError(f"window must be an odd positive integer, got {window}")
    half = int(window) // 2
    out = np.zeros((ann.height, ann.width))
    for x, y in ann.points:
        cx, cy = _snap(x, ann.width), _snap(y, ann.height)
        out[max(cy - half, 0) : cy + half + 1, max(cx - half, 0) : cx + half + 1] = 1.0
    return AttentionMap(out)


def nearest_rank_quantile(values: np.ndarray, q: float) -> float:
    flat = np.sort(np.asarray(values, dtype=np.float64).ravel())
    rank = max(int(math.ceil(q * flat.size)), 1)
    return float(flat[rank - 1])


def generate_attention_threshold(dmap: DensityMap, q: float = 0.40) -> AttentionMap:
    """Foreground = pixels strictly above the nearest-rank ``q`` quantile."""
    if not 0 < q < 1:
        raise InvalidParameterError(f"quantile must lie in (0, 1), got {q}")
    t = nearest_rank_quantile(dmap.values, q)
    return AttentionMap((dmap.values > t).astype(np.float64))


@dataclass(frozen=True)
class SceneConfig:
    width: int = 256
    height: int = 256
    head_count_range: tuple = (50, 300)
    placement: str = "uniform"
    components: int = 4
    noise_sigma: float = 0.0
    # when set, noise_sigma is a fraction of the clean map's peak value
    noise_relative: bool = False
    seed: int = 0
    sigma: SigmaPolicy = field(default_factory=SigmaPolicy)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidParameterError(f"zero-area frame {self.width}x{self.height}")
        lo, hi = self.head_count_range
        if lo < 0 or lo > hi:
            raise InvalidParameterError(f"bad head count range {self.head_count_range}")
        if self.placement not in ("uniform", "mixture"):
            raise InvalidParameterError(f"unknown placement {self.placement!r}")
        if self.placement == "mixture" and self.components < 1:
            raise InvalidParameterError("mixture placement needs at least one component")
        if not self.noise_sigma >= 0:
            raise InvalidParameterError("noise_sigma must be >= 0")


def _place_heads(cfg: SceneConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    w, h = cfg.width, cfg.height
    if cfg.placement == "uniform":
        pts = rng.uniform(0.0, 1.0, size=(n, 2)) * [w, h]
    else:
        centers = rng.uniform(0.0, 1.0, size=(cfg.components, 2)) * [w, h]
        spreads = rng.uniform(0.04, 0.15, size=cfg.components) * min(w, h)
        comp = rng.integers(0, cfg.components, size=n)
        pts = centers[comp] + rng.normal(size=(n, 2)) * spreads[comp, None]
    # keep strictly inside [0, w) x [0, h)
    pts[:, 0] = np.clip(pts[:, 0], 0.0, np.nextafter(w, 0))
    pts[:, 1] = np.clip(pts[:, 1], 0.0, np.nextafter(h, 0))
    return pts


def synth_scene(cfg: SceneConfig):
    """Return ``(annotations, clean_map, noisy_map)``, deterministic in ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.head_count_range
    n = int(rng.integers(lo, hi + 1))
    ann = AnnotationSet(cfg.width, cfg.height, _place_heads(cfg, rng, n))
    clean = generate_density_map(ann, cfg.sigma)
    scale = cfg.noise_sigma
    if cfg.noise_relative:
        scale *= float(clean.values.max()) if n else 0.0
    if scale == 0:
        return ann, clean, clean
    noise = rng.normal(0.0, scale, size=clean.values.shape)
    return ann, clean, DensityMap(np.maximum(clean.values + noise, 0.0))
