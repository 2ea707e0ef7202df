"""Link-profile clustering and the elbow rule for group counts."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from heteroplan.kmeans import (
    choose_group_count,
    cluster_groups,
    device_features,
    kmeans_fit,
)
from heteroplan.presets import two_region_cluster
from test_costs import uniform_cluster
from heteroplan.cluster import GpuType


def exhaustive_best_inertia(x: np.ndarray, k: int) -> float:
    """Global optimum over every labeling (tiny n only)."""

    n = len(x)
    best = np.inf
    for labels in itertools.product(range(k), repeat=n):
        total = 0.0
        for c in range(k):
            members = x[np.array(labels) == c]
            if len(members):
                center = members.mean(axis=0)
                total += float(((members - center) ** 2).sum())
        best = min(best, total)
    return best


class TestTwoRegionClustering:
    def test_kmeans_reaches_global_optimum_for_k_1_to_4(self, two_region):
        x = device_features(two_region)
        for k in range(1, 5):
            _, inertia = kmeans_fit(x, k, seed=0)
            want = exhaustive_best_inertia(x, k)
            assert inertia == pytest.approx(want, rel=1e-9, abs=1e-12)

    def test_elbow_selects_two_region_aligned_groups(self, two_region):
        groups = cluster_groups(two_region, seed=0)
        assert len(groups) == 2
        # buckets: east machine first, then west; each group sticks to one
        assert sorted(groups) == [(0, 4), (4, 0)]

    def test_split_is_region_pure(self, two_region):
        x = device_features(two_region)
        labels, _ = kmeans_fit(x, 2, seed=0)
        east, west = set(labels[:4]), set(labels[4:])
        assert len(east) == 1 and len(west) == 1 and east != west


def test_homogeneous_pool_collapses_to_one_group():
    gpu = GpuType("g", 1e12, 5e11, 2e13)
    cluster = uniform_cluster([4], [gpu], alpha=1e-5, beta=1e10)
    groups = cluster_groups(cluster, seed=0)
    assert groups == [(4,)]


class TestElbowRule:
    def test_second_difference_argmax(self):
        # drops: 100 -> 10 -> 8 -> 7: the big kink is at k=2
        assert choose_group_count([100.0, 10.0, 8.0, 7.0]) == 2

    def test_flat_inertia_defaults_to_one(self):
        assert choose_group_count([1e-15, 1e-15, 1e-15]) == 1

    def test_two_point_curve(self):
        assert choose_group_count([100.0, 10.0]) == 2     # halved -> split
        assert choose_group_count([100.0, 90.0]) == 1     # barely helps

    def test_tie_prefers_smaller_k(self):
        # equal second differences at k=2 and k=3
        assert choose_group_count([9.0, 4.0, 1.0, 0.0, 1.0]) == 2


def test_kmeans_deterministic_per_seed(two_region):
    x = device_features(two_region)
    a = kmeans_fit(x, 3, seed=42)
    b = kmeans_fit(x, 3, seed=42)
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]


def test_groups_cover_every_device(two_region, three_tier):
    for cluster in (two_region, three_tier):
        groups = cluster_groups(cluster, seed=1)
        totals = [sum(g[k] for g in groups) for k in range(len(cluster.capacities))]
        assert totals == list(cluster.capacities)
        assert all(any(v > 0 for v in g) for g in groups)
