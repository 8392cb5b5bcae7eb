"""Lloyd's k-means with k-means++ seeding and best-of-n restarts."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    closest = _sq_dists(points, centroids[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centroids[c] = points[idx]
        closest = np.minimum(closest, _sq_dists(points, centroids[c : c + 1])[:, 0])
    return centroids


def lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int = 300):
    """Run Lloyd iterations until assignments stop changing.

    An emptied cluster is reseeded at the point farthest from its current
    centroid. Returns ``(labels, centroids, wcss)`` with 0-based labels.
    """
    centroids = centroids.copy()
    k = centroids.shape[0]
    labels = None
    for _ in range(max_iter):
        d = _sq_dists(points, centroids)
        new = d.argmin(axis=1)
        counts = np.bincount(new, minlength=k)
        for c in np.flatnonzero(counts == 0):
            far = int(d[np.arange(len(points)), new].argmax())
            new[far] = c
            d[far, :] = np.inf
            d[far, c] = 0.0
            counts = np.bincount(new, minlength=k)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            centroids[c] = points[labels == c].mean(axis=0)
    wcss = float(((points - centroids[labels]) ** 2).sum())
    return labels, centroids, wcss


def kmeans(points, k: int, rng: np.random.Generator, n_init: int = 10, max_iter: int = 300):
    """Best-of-``n_init`` k-means on the rows of ``points``.

    Returns ``(labels, centroids, wcss)``; labels are 0-based.
    """
    points = np.asarray(points, dtype=np.float64)
    if k < 1:
        raise ConfigError("k must be positive")
    if k > len(points):
        raise ConfigError(f"k={k} exceeds the number of points ({len(points)})")
    if len(np.unique(points, axis=0)) < k:
        raise DataError(f"fewer than k={k} distinct points; clusters would be degenerate")
    best = None
    for _ in range(n_init):
        result = lloyd(points, kmeans_pp_init(points, k, rng), max_iter)
        if best is None or result[2] < best[2]:
            best = result
    return best


def wcss(points, labels) -> float:
    points = np.asarray(points, dtype=np.float64)
    total = 0.0
    for c in np.unique(labels):
        grp = points[labels == c]
        total += float(((grp - grp.mean(axis=0)) ** 2).sum())
    return total
