"""Brute-force reference implementations used only by the tests.

Each one is written from the definition, loop by loop, and shares no code
with the package paths it checks.
"""
import math
from collections import deque

import numpy as np


def gaussian_window(size, sigma):
    half = size // 2
    w = np.zeros((size, size))
    for i in range(size):
        for j in range(size):
            w[i, j] = math.exp(-((i - half) ** 2 + (j - half) ** 2) / (2 * sigma * sigma))
    return w / w.sum()


def ssim_loss_brute(pred, gt, size=11, sigma=1.5, c1=1e-4, c2=9e-4):
    """Per-pixel sliding window with half-sample symmetric borders."""
    W = gaussian_window(size, sigma)
    half = size // 2
    h, w = pred.shape

    def at(img, r, c):
        # mirror about the edge, repeating the border pixel
        while r < 0 or r >= h:
            r = -r - 1 if r < 0 else 2 * h - r - 1
        while c < 0 or c >= w:
            c = -c - 1 if c < 0 else 2 * w - c - 1
        return img[r, c]

    total = 0.0
    for r in range(h):
        for c in range(w):
            pa = np.array([[at(pred, r + i - half, c + j - half) for j in range(size)] for i in range(size)])
            ga = np.array([[at(gt, r + i - half, c + j - half) for j in range(size)] for i in range(size)])
            mp, mg = (W * pa).sum(), (W * ga).sum()
            vp = (W * (pa - mp) ** 2).sum()
            vg = (W * (ga - mg) ** 2).sum()
            cov = (W * (pa - mp) * (ga - mg)).sum()
            total += ((2 * mp * mg + c1) * (2 * cov + c2)) / ((mp**2 + mg**2 + c1) * (vp + vg + c2))
    return 1.0 - total / (h * w)


def dbscan_brute(xs, ys, weights, eps, min_weight):
    """Canonical partition: a set of frozensets of (x, y) coordinates."""
    n = len(xs)
    pts = [(int(xs[i]), int(ys[i])) for i in range(n)]

    def d2(a, b):
        return (pts[a][0] - pts[b][0]) ** 2 + (pts[a][1] - pts[b][1]) ** 2

    near = [[j for j in range(n) if d2(i, j) <= eps * eps] for i in range(n)]
    core = [sum(weights[j] for j in near[i]) >= min_weight for i in range(n)]
    label = [None] * n
    if not any(core):
        return {frozenset(pts)}
    cid = 0
    for s in range(n):
        if not core[s] or label[s] is not None:
            continue
        label[s] = cid
        queue = deque([s])
        while queue:
            a = queue.popleft()
            for b in near[a]:
                if core[b] and label[b] is None:
                    label[b] = cid
                    queue.append(b)
        cid += 1

    def rowmajor(i):
        return (pts[i][1], pts[i][0])

    border = {}
    for i in range(n):
        if core[i]:
            continue
        cands = [j for j in near[i] if core[j]]
        if cands:
            best = min(cands, key=lambda j: (d2(i, j), rowmajor(j)))
            border[i] = label[best]
    for i, c in border.items():
        label[i] = c
    labeled = [j for j in range(n) if label[j] is not None]
    for i in range(n):
        if label[i] is None:
            best = min(labeled, key=lambda j: (d2(i, j), rowmajor(j)))
            label[i] = label[best]
    groups = {}
    for i in range(n):
        groups.setdefault(label[i], set()).add(pts[i])
    return {frozenset(g) for g in groups.values()}


def exhaustive_wcss(X, w, K):
    """Minimum weighted within-cluster sum of squares over every labeling."""
    X = np.asarray(X, dtype=float)
    w = np.asarray(w, dtype=float)
    n = len(X)
    if K >= n:
        return 0.0
    sq = (w * (X**2).sum(axis=1)).sum()
    # point 0 pinned to cluster 0 removes one factor of label symmetry;
    # labelings are the base-K digits of 0 .. K**(n-1) - 1
    total = K ** (n - 1)
    powers = K ** np.arange(n - 1)
    top = -np.inf
    for start in range(0, total, 200_000):
        idx = np.arange(start, min(start + 200_000, total))
        labels = np.zeros((len(idx), n), dtype=np.int64)
        labels[:, 1:] = (idx[:, None] // powers) % K
        gain = np.zeros(len(idx))
        for k in range(K):
            m = (labels == k).astype(float)
            W = m @ w
            Sx = m @ (w * X[:, 0])
            Sy = m @ (w * X[:, 1])
            with np.errstate(invalid="ignore", divide="ignore"):
                gain += np.where(W > 0, (Sx**2 + Sy**2) / W, 0.0)
        top = max(top, gain.max())
    return float(sq - top)


def plain_lloyd(X, C, iters):
    """Unweighted Lloyd on an explicit point list, lower-index tie-break."""
    X = np.asarray(X, dtype=float)
    C = np.array(C, dtype=float)
    for _ in range(iters):
        lab = []
        for x in X:
            d = [((x - c) ** 2).sum() for c in C]
            lab.append(int(np.argmin(d)))
        lab = np.array(lab)
        new = np.array([X[lab == k].mean(axis=0) for k in range(len(C))])
        if np.sqrt(((new - C) ** 2).sum(axis=1)).max() < 1e-12:
            C = new
            break
        C = new
    return C


def knn_mean_distance(points, j, k):
    d = sorted(math.dist(points[j], points[i]) for i in range(len(points)) if i != j)
    return sum(d[:k]) / k


def window_mask_brute(points, width, height, window):
    half = window // 2
    out = np.zeros((height, width))
    for r in range(height):
        for c in range(width):
            for x, y in points:
                cx, cy = min(math.floor(x + 0.5), width - 1), min(math.floor(y + 0.5), height - 1)
                if max(abs(c - cx), abs(r - cy)) <= half:
                    out[r, c] = 1
                    break
    return out
