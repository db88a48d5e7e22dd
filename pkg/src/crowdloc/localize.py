"""Unsupervised head localization on density maps.

A density map is turned into a weighted set of pixel coordinates (each pixel
weighted by ``round(value * expansion)``). Plain localization runs weighted
KMeans with K equal to the rounded map integral. Isolated KMeans first splits
the point set into DBSCAN subregions, gives each subregion its own local head
count, and runs KMeans inside each one so that the number of centers matches
the density mass both globally and locally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import InfeasibleKError, InvalidParameterError, ValidationError
from .grid import DensityMap, integral_count

DEFAULT_EXPANSION = 500.0
# below this many centers a dense distance matrix beats a KD-tree
_BRUTE_K = 16


def round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


@dataclass(frozen=True, eq=False)
class WeightedPointSet:
    xs: np.ndarray
    ys: np.ndarray
    weights: np.ndarray
    density: np.ndarray = None

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.int64).ravel()
        ys = np.asarray(self.ys, dtype=np.int64).ravel()
        w = np.asarray(self.weights, dtype=np.int64).ravel()
        d = w / DEFAULT_EXPANSION if self.density is None else np.asarray(self.density, dtype=np.float64).ravel()
        if not (len(xs) == len(ys) == len(w) == len(d)):
            raise ValidationError("point set arrays differ in length")
        if np.any(w < 1):
            raise ValidationError("point weights must be >= 1")
        if np.any(xs < 0) or np.any(ys < 0):
            raise ValidationError("point coordinates must be non-negative pixels")
        if len(xs) > 1 and len(np.unique(np.stack([xs, ys], 1), axis=0)) != len(xs):
            raise ValidationError("duplicate coordinates; merge their weights")
        for name, arr in (("xs", xs), ("ys", ys), ("weights", w), ("density", d)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.xs)

    @property
    def coords(self) -> np.ndarray:
        return np.stack([self.xs, self.ys], axis=1).astype(np.float64)

    @property
    def total_weight(self) -> int:
        return int(self.weights.sum())

    def subset(self, mask) -> "WeightedPointSet":
        return WeightedPointSet(self.xs[mask], self.ys[mask], self.weights[mask], self.density[mask])

    def replicated(self) -> np.ndarray:
        """Explicit coordinate list with each pixel repeated ``weight`` times."""
        return np.repeat(self.coords, self.weights, axis=0)


@dataclass(frozen=True)
class KMeansParams:
    max_iters: int = 100
    tol: float = 1e-4
    seed: int = 0
    init: str = "plusplus"
    # seeded k-means++ starts; each gets probe_iters Lloyd steps and the
    # lowest-WCSS one is run to convergence
    n_init: int = 8
    probe_iters: int = 3

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidParameterError("max_iters must be >= 1")
        if self.n_init < 1 or self.probe_iters < 1:
            raise InvalidParameterError("n_init and probe_iters must be >= 1")
        if not self.tol > 0:
            raise InvalidParameterError("tol must be positive")
        if self.init != "plusplus":
            raise InvalidParameterError(f"unknown init {self.init!r}")


@dataclass(frozen=True)
class DbscanParams:
    epsilon: float = 5.0
    min_weight: int = 5

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidParameterError("epsilon must be positive")
        if self.min_weight < 1:
            raise InvalidParameterError("min_weight must be >= 1")


@dataclass(frozen=True)
class SubregionPartition:
    labels: np.ndarray
    region_counts: tuple = ()
    order: tuple = ()

    @property
    def n_regions(self) -> int:
        return int(self.labels.max()) if len(self.labels) else 0


@dataclass(frozen=True, eq=False)
class LocalizationResult:
    """``centers`` rows are ``(x, y, mass)`` sorted by descending mass."""

    centers: np.ndarray
    partition: SubregionPartition = None

    @property
    def K(self) -> int:
        return len(self.centers)

    @classmethod
    def empty(cls, partition=None):
        return cls(np.zeros((0, 3)), partition)


@dataclass
class KMeansFit:
    centers: np.ndarray
    labels: np.ndarray
    masses: np.ndarray
    wcss_history: list = field(default_factory=list)
    n_iter: int = 0

    @property
    def wcss(self) -> float:
        return self.wcss_history[-1] if self.wcss_history else 0.0


def build_point_set(dmap: DensityMap, factor: float = DEFAULT_EXPANSION) -> WeightedPointSet:
    if not factor > 0:
        raise InvalidParameterError(f"expansion factor must be positive, got {factor}")
    freq = np.floor(dmap.values * factor + 0.5).astype(np.int64)
    ys, xs = np.nonzero(freq)
    return WeightedPointSet(xs, ys, freq[ys, xs], dmap.values[ys, xs])


def global_cluster_count(dmap: DensityMap) -> int:
    return max(0, round_half_up(integral_count(dmap)))


def _sort_centers(centers: np.ndarray) -> np.ndarray:
    if len(centers) == 0:
        return np.zeros((0, 3))
    order = np.lexsort((centers[:, 1], centers[:, 0], -centers[:, 2]))
    return centers[order]


# -- KMeans ------------------------------------------------------------------

def _sqdist(X, C):
    return (X[:, None, 0] - C[None, :, 0]) ** 2 + (X[:, None, 1] - C[None, :, 1]) ** 2


def _assign(X: np.ndarray, C: np.ndarray):
    """Nearest center per point; exact ties go to the lower center index."""
    if len(C) <= _BRUTE_K:
        d2 = _sqdist(X, C)
        labels = np.argmin(d2, axis=1)
        return labels, d2[np.arange(len(X)), labels]
    dist, idx = cKDTree(C).query(X, k=2)
    labels = idx[:, 0].copy()
    near_tie = dist[:, 1] - dist[:, 0] <= 1e-9 * (1.0 + dist[:, 0])
    rows = np.flatnonzero(near_tie)
    for start in range(0, len(rows), 2048):
        chunk = rows[start : start + 2048]
        labels[chunk] = np.argmin(_sqdist(X[chunk], C), axis=1)
    dx = X[:, 0] - C[labels, 0]
    dy = X[:, 1] - C[labels, 1]
    return labels, dx * dx + dy * dy


def _plusplus_init(X, w, K, rng):
    n = len(X)
    xs, ys = X[:, 0].copy(), X[:, 1].copy()
    cum = np.cumsum(w)
    first = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    chosen = [min(first, n - 1)]
    d2 = (xs - xs[chosen[0]]) ** 2 + (ys - ys[chosen[0]]) ** 2
    for _ in range(1, K):
        cum = np.cumsum(w * d2)
        # side="right" always lands on a point with d2 > 0, so picks are distinct
        nxt = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        nxt = min(nxt, n - 1)
        chosen.append(nxt)
        np.minimum(d2, (xs - xs[nxt]) ** 2 + (ys - ys[nxt]) ** 2, out=d2)
    return X[chosen].copy()


def _repair_empty(labels, d2, K):
    """Give each empty cluster the farthest point whose cluster can spare it."""
    sizes = np.bincount(labels, minlength=K)
    empty = np.flatnonzero(sizes == 0)
    if not len(empty):
        return None
    order = np.lexsort((np.arange(len(d2)), -d2))
    seized = []
    pos = 0
    for j in empty:
        while sizes[labels[order[pos]]] <= 1:
            pos += 1
        p = order[pos]
        pos += 1
        sizes[labels[p]] -= 1
        labels[p] = j
        sizes[j] = 1
        d2[p] = 0.0
        seized.append((j, p))
    return seized


def _lloyd(X, w, C, K, max_iters, tol):
    """Returns ``(centers, labels, masses, history, n_iter, converged)``."""
    history = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        labels, d2 = _assign(X, C)
        seized = _repair_empty(labels, d2, K)
        if seized:
            for j, p in seized:
                C[j] = X[p]
        mass = np.bincount(labels, weights=w, minlength=K)
        new_C = np.stack(
            [np.bincount(labels, weights=w * X[:, 0], minlength=K),
             np.bincount(labels, weights=w * X[:, 1], minlength=K)],
            axis=1,
        ) / mass[:, None]
        dx = X[:, 0] - new_C[labels, 0]
        dy = X[:, 1] - new_C[labels, 1]
        history.append(float((w * (dx * dx + dy * dy)).sum()))
        shift = np.sqrt(((new_C - C) ** 2).sum(axis=1)).max()
        C = new_C
        if shift < tol:
            converged = True
            break
    return C, labels, mass, history, it, converged


def _start_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng(seed if i == 0 else [seed, i])


def fit_kmeans(pts: WeightedPointSet, K: int, params: KMeansParams = KMeansParams(), init_centers=None) -> KMeansFit:
    """Weighted Lloyd iterations from k-means++ (or supplied) centers.

    Without ``init_centers``, ``params.n_init`` seeded k-means++ starts each
    run ``params.probe_iters`` steps and the one with the lowest WCSS
    continues. ``wcss_history`` is the chosen run's WCSS after every update
    step; it never increases.
    """
    n = len(pts)
    if K < 0:
        raise InvalidParameterError(f"K must be >= 0, got {K}")
    if K > n:
        raise InfeasibleKError(K, n)
    if K == 0:
        return KMeansFit(np.zeros((0, 2)), np.full(n, -1), np.zeros(0))
    X = pts.coords
    w = pts.weights.astype(np.float64)
    if init_centers is not None:
        C = np.array(init_centers, dtype=np.float64).reshape(K, 2)
        C, labels, mass, history, it, _ = _lloyd(X, w, C, K, params.max_iters, params.tol)
        return KMeansFit(C, labels, mass, history, it)

    # one start suffices when K == 1: the weighted centroid is reached in a step
    starts = 1 if K == 1 else params.n_init
    probe = params.max_iters if starts == 1 else min(params.probe_iters, params.max_iters)
    best = None
    for i in range(starts):
        C0 = _plusplus_init(X, w, K, _start_rng(params.seed, i))
        run = _lloyd(X, w, C0, K, probe, params.tol)
        if best is None or run[3][-1] < best[3][-1]:
            best = run
    C, labels, mass, history, it, converged = best
    if not converged and it < params.max_iters:
        C, labels, mass, more, extra, _ = _lloyd(X, w, C, K, params.max_iters - it, params.tol)
        history = history + more
        it += extra
    return KMeansFit(C, labels, mass, history, it)


def kmeans(pts: WeightedPointSet, K: int, params: KMeansParams = KMeansParams()) -> LocalizationResult:
    fit = fit_kmeans(pts, K, params)
    return LocalizationResult(_sort_centers(np.column_stack([fit.centers, fit.masses])))


def localize_kmeans(
    dmap: DensityMap, factor: float = DEFAULT_EXPANSION, kp: KMeansParams = KMeansParams()
) -> LocalizationResult:
    """Plain baseline: one weighted KMeans over the whole map with K = round(integral)."""
    K = global_cluster_count(dmap)
    pts = _point_set_for(dmap, factor)
    if K == 0:
        return LocalizationResult.empty()
    if K > len(pts):
        # no subregion bookkeeping to fall back on: reuse the isolated allocator on one region
        return _allocate_and_fit(pts, np.ones(len(pts), dtype=np.int64), K, kp)
    return kmeans(pts, K, kp)


# -- DBSCAN ------------------------------------------------------------------

def _disc_offsets(eps: float) -> np.ndarray:
    r = int(math.floor(eps))
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    keep = dx**2 + dy**2 <= eps**2
    off = np.stack([dx[keep], dy[keep]], axis=1)
    d2 = (off**2).sum(axis=1)
    # nearest first; equal distance resolved toward the lower row, then column
    return off[np.lexsort((off[:, 0], off[:, 1], d2))]


def _nearest_rowmajor(targets: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Index into ``targets`` (sorted row-major) of each query's nearest target.

    Equidistant targets resolve to the lowest index, i.e. the first in
    row-major order.
    """
    nt = len(targets)
    k = min(4, nt)
    tree = cKDTree(targets)
    dist, idx = tree.query(queries, k=k)
    if k == 1:
        return np.asarray(idx).reshape(-1)
    out = np.empty(len(queries), dtype=np.int64)
    for q in range(len(queries)):
        tied = dist[q] == dist[q, 0]
        if tied.all() and k < nt:
            d2 = ((targets - queries[q]) ** 2).sum(axis=1)
            out[q] = int(np.flatnonzero(d2 == d2.min())[0])
        else:
            out[q] = int(idx[q][tied].min())
    return out


def dbscan(pts: WeightedPointSet, params: DbscanParams = DbscanParams()) -> SubregionPartition:
    """Weighted DBSCAN on integer pixel coordinates, with every point labeled.

    A point is core when the total weight within ``epsilon`` (itself
    included) reaches ``min_weight``. Core points within ``epsilon`` of each
    other share a cluster. A non-core point within reach of a core point
    joins its nearest core point's cluster; remaining noise joins the cluster
    of its nearest labeled point. Labels run 1..N in order of first
    appearance.
    """
    n = len(pts)
    if n == 0:
        return SubregionPartition(np.zeros(0, dtype=np.int64))
    x0, y0 = int(pts.xs.min()), int(pts.ys.min())
    gx, gy = pts.xs - x0, pts.ys - y0
    offsets = _disc_offsets(params.epsilon)
    r = int(math.floor(params.epsilon))
    H, W = int(gy.max()) + 1, int(gx.max()) + 1
    # pad by r so every stencil shift is a plain slice
    index = np.full((H + 2 * r, W + 2 * r), -1, dtype=np.int64)
    index[gy + r, gx + r] = np.arange(n)
    weight = np.zeros(index.shape, dtype=np.int64)
    weight[gy + r, gx + r] = pts.weights

    def shifted(img, dx, dy):
        return img[gy + r + dy, gx + r + dx]

    reach = np.zeros(n, dtype=np.int64)
    for dx, dy in offsets:
        reach += shifted(weight, dx, dy)
    core = reach >= params.min_weight

    labels = np.zeros(n, dtype=np.int64)
    if not core.any():
        # nothing dense enough to seed a cluster: treat the whole set as one region
        labels[:] = 1
        return SubregionPartition(labels)

    src, dst = [], []
    for dx, dy in offsets:
        if dy < 0 or (dy == 0 and dx <= 0):
            continue
        nb = shifted(index, dx, dy)
        ok = core & (nb >= 0)
        ok[ok] = core[nb[ok]]
        src.append(np.flatnonzero(ok))
        dst.append(nb[ok])
    src, dst = np.concatenate(src), np.concatenate(dst)
    graph = coo_matrix((np.ones(len(src)), (src, dst)), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    comp = np.where(core, comp, -1)

    # border points: nearest core neighbour within epsilon
    for dx, dy in offsets:
        if dx == 0 and dy == 0:
            continue
        todo = np.flatnonzero(comp < 0)
        if not len(todo):
            break
        nb = index[gy[todo] + r + dy, gx[todo] + r + dx]
        hit = nb >= 0
        hit[hit] = core[nb[hit]]
        comp[todo[hit]] = comp[nb[hit]]

    noise = np.flatnonzero(comp < 0)
    if len(noise):
        lab = np.flatnonzero(comp >= 0)
        # row-major sort of labeled points so ties fall to the first one
        lab = lab[np.lexsort((pts.xs[lab], pts.ys[lab]))]
        tgt = np.stack([pts.xs[lab], pts.ys[lab]], axis=1).astype(np.float64)
        qry = np.stack([pts.xs[noise], pts.ys[noise]], axis=1).astype(np.float64)
        comp[noise] = comp[lab[_nearest_rowmajor(tgt, qry)]]

    _, first = np.unique(comp, return_index=True)
    remap = np.empty(comp.max() + 1, dtype=np.int64)
    remap[comp[np.sort(first)]] = np.arange(1, len(first) + 1)
    return SubregionPartition(remap[comp])


# -- isolated KMeans ---------------------------------------------------------

def allocate_region_counts(raw: np.ndarray, capacity: np.ndarray, K: int):
    """Split ``K`` centers across subregions.

    ``raw`` is each region's density mass. Regions are sorted ascending by
    their rounded mass; all but the last keep their rounded count and the
    last takes the remainder. Negative remainders are taken back from the
    most over-rounded regions, and counts above a region's distinct-pixel
    capacity spill round-robin to the largest regions with room. Returns
    ``(counts, order, overflow)``; ``overflow`` is the number of centers no
    region could hold.
    """
    m = len(raw)
    rounded = np.array([round_half_up(v) for v in raw], dtype=np.int64)
    order = np.lexsort((np.arange(m), raw, rounded))
    alloc = rounded.copy()
    last = order[-1]
    alloc[last] = K - (rounded.sum() - rounded[last])
    rank = np.empty(m, dtype=np.int64)
    rank[order] = np.arange(m)

    deficit = 0
    if alloc[last] < 0:
        deficit = -int(alloc[last])
        alloc[last] = 0
    while deficit:
        over = np.where(alloc > 0, alloc - raw, -np.inf)
        j = max(range(m), key=lambda i: (over[i], rank[i]))
        alloc[j] -= 1
        deficit -= 1

    surplus = int(np.maximum(alloc - capacity, 0).sum())
    alloc = np.minimum(alloc, capacity)
    while surplus:
        gave = False
        for j in order[::-1]:
            if surplus and alloc[j] < capacity[j]:
                alloc[j] += 1
                surplus -= 1
                gave = True
        if not gave:
            break
    return alloc, order, surplus


def _allocate_and_fit(pts: WeightedPointSet, labels: np.ndarray, K: int, kp: KMeansParams):
    n_reg = int(labels.max())
    raw = np.array([pts.density[labels == i + 1].sum() for i in range(n_reg)])
    capacity = np.bincount(labels - 1, minlength=n_reg).astype(np.int64)
    alloc, order, overflow = allocate_region_counts(raw, capacity, K)

    parts = []
    for pos, reg in enumerate(order):
        k = int(alloc[reg])
        if k == 0:
            continue
        sub = pts.subset(labels == reg + 1)
        fit = fit_kmeans(sub, k, KMeansParams(kp.max_iters, kp.tol, kp.seed + pos, kp.init))
        parts.append(np.column_stack([fit.centers, fit.masses]))
    if overflow:
        # more heads than distinct pixels: stack the rest on the heaviest pixels
        heavy = np.lexsort((pts.xs, pts.ys, -pts.weights))
        picks = heavy[np.arange(overflow) % len(heavy)]
        parts.append(np.column_stack([pts.xs[picks], pts.ys[picks], np.zeros(overflow)]).astype(np.float64))

    partition = SubregionPartition(
        labels,
        tuple(int(a) + (overflow if i == order[-1] else 0) for i, a in enumerate(alloc)),
        tuple(int(o) + 1 for o in order),
    )
    centers = np.concatenate(parts) if parts else np.zeros((0, 3))
    return LocalizationResult(_sort_centers(centers), partition)


def _point_set_for(dmap: DensityMap, factor: float) -> WeightedPointSet:
    pts = build_point_set(dmap, factor)
    if len(pts) == 0 and dmap.values.max() > 0:
        # mass too thin to survive rounding: fall back to every positive pixel once
        ys, xs = np.nonzero(dmap.values > 0)
        pts = WeightedPointSet(xs, ys, np.ones(len(xs), dtype=np.int64), dmap.values[ys, xs])
    return pts


def isolated_kmeans(
    dmap: DensityMap,
    factor: float = DEFAULT_EXPANSION,
    dp: DbscanParams = DbscanParams(),
    kp: KMeansParams = KMeansParams(),
) -> LocalizationResult:
    K = global_cluster_count(dmap)
    if K == 0:
        return LocalizationResult.empty()
    pts = _point_set_for(dmap, factor)
    partition = dbscan(pts, dp)
    return _allocate_and_fit(pts, partition.labels, K, kp)
