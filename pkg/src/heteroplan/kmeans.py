"""Deterministic device clustering used to seed the partition search.

Each device is embedded as its row of ``minmax(alpha) + minmax(1/beta)``
(off-diagonal entries only, diagonal zeroed): devices separated by slow or
laggy links land far apart, so Lloyd's algorithm recovers link-locality
groups.  The group count is picked by the elbow rule on inertia.

Hand-rolled (rather than a library fit) to keep results bit-reproducible
across environments; seeding is k-means++ driven by a seeded Generator.
"""

from __future__ import annotations

import numpy as np

from .cluster import ClusterSpec, TypeVector


def _minmax_offdiag(m: np.ndarray) -> np.ndarray:
    n = m.shape[0]
    off = ~np.eye(n, dtype=bool)
    vals = m[off]
    lo, hi = vals.min(), vals.max()
    out = np.zeros_like(m, dtype=float)
    if hi > lo:
        out[off] = (m[off] - lo) / (hi - lo)
    return out


def device_features(cluster: ClusterSpec) -> np.ndarray:
    """N x N feature matrix; row d describes device d's link costs."""

    inv_beta = np.zeros_like(cluster.beta)
    off = ~np.eye(cluster.n_devices, dtype=bool)
    inv_beta[off] = 1.0 / cluster.beta[off]
    return _minmax_offdiag(cluster.alpha) + _minmax_offdiag(inv_beta)


def _lloyd(x: np.ndarray, k: int, rng: np.random.Generator,
           max_iter: int = 100) -> tuple[np.ndarray, float]:
    n = x.shape[0]
    # k-means++ seeding
    centers = [x[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min([np.sum((x - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0.0:
            centers.append(x[rng.integers(n)])
            continue
        r = rng.random() * total
        idx = int(np.searchsorted(np.cumsum(d2), r))
        centers.append(x[min(idx, n - 1)])
    centers = np.array(centers)

    labels = np.full(n, -1, dtype=int)
    for _it in range(max_iter):
        dists = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(dists, axis=1)
        empties = [c for c in range(k) if not np.any(new_labels == c)]
        if empties:                  # reseed each empty cluster with a distinct
            order = np.argsort(-np.min(dists, axis=1), kind="stable")
            for c, point in zip(empties, order):   # farthest-out point
                new_labels[int(point)] = c
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = labels == c
            if np.any(members):
                centers[c] = x[members].mean(axis=0)
    dists = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    inertia = float(np.sum(dists[np.arange(n), labels]))
    return labels, inertia


def kmeans_fit(x: np.ndarray, k: int, seed: int, n_init: int = 3) -> tuple[np.ndarray, float]:
    """Best-of-n_init Lloyd runs; deterministic in (x, k, seed)."""

    best: tuple[np.ndarray, float] | None = None
    for restart in range(n_init):
        rng = np.random.default_rng([seed, k, restart])
        labels, inertia = _lloyd(x, k, rng)
        if best is None or inertia < best[1]:
            best = (labels, inertia)
    return best


def choose_group_count(inertias: list[float]) -> int:
    """Elbow rule: argmax of the second difference of inertia over k.

    inertias[i] is the inertia at k = i + 1.  Degenerate-symmetry guard: a
    near-zero inertia at k=1 means all devices look alike, so one group.
    With fewer than three candidate k there is no interior second
    difference; fall back to 2 iff it at least halves the inertia.
    """

    kmax = len(inertias)
    if kmax == 0:
        raise ValueError("need at least one inertia value")
    scale = max(inertias[0], 1.0)
    if kmax == 1 or inertias[0] <= 1e-12 * scale:
        return 1
    if kmax == 2:
        return 2 if inertias[1] <= 0.5 * inertias[0] else 1
    best_k, best_curv = 1, -np.inf
    for k in range(2, kmax):        # interior points k with both neighbours
        curv = inertias[k - 2] - 2.0 * inertias[k - 1] + inertias[k]
        if curv > best_curv + 1e-12 * scale:
            best_curv = curv
            best_k = k
    return best_k


def cluster_groups(cluster: ClusterSpec, seed: int, k_max: int = 8) -> list[TypeVector]:
    """K-means + elbow over device features, folded to bucket-count groups."""

    x = device_features(cluster)
    kmax = min(cluster.n_devices, k_max)
    inertias = [kmeans_fit(x, k, seed)[1] for k in range(1, kmax + 1)]
    m = choose_group_count(inertias)
    labels, _ = kmeans_fit(x, m, seed)

    n_buckets = len(cluster.buckets)
    groups: list[list[int]] = [[0] * n_buckets for _ in range(m)]
    for did, lab in enumerate(labels):
        groups[lab][cluster.bucket_of(did)] += 1
    return [tuple(g) for g in groups if sum(g) > 0]
