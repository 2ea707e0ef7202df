"""Canned synthetic clusters and model shapes used by the test suite and the
example scripts.

All hardware constants here are declared, not measured.  The a100-like
bandwidth/compute/link numbers are *effective* serving-throughput constants
(they fold kernel and scheduling inefficiency into the device rates), which
is why they sit far below datasheet peaks.
"""

from __future__ import annotations

import numpy as np

from .cluster import Device, GpuType, ClusterSpec, ModelSpec, build_cluster

GB = 1e9


def llama70b() -> ModelSpec:
    """Llama-2-70B serving shape at fp16."""
    return ModelSpec(num_layers=80, hidden_dim=8192, bytes_per_param=2)


def toy_model() -> ModelSpec:
    """Eight thin layers; parameters fit on a couple of tiny test devices."""
    return ModelSpec(num_layers=8, hidden_dim=1024, bytes_per_param=2)


def _uniform_links(n: int, groups: list[list[int]], alpha_in: float, alpha_out: float,
                   beta_in: float, beta_out: float) -> tuple[np.ndarray, np.ndarray]:
    """Block link matrices: fast within a device group, slow across."""

    alpha = np.full((n, n), alpha_out)
    beta = np.full((n, n), beta_out)
    for g in groups:
        for a in g:
            for b in g:
                alpha[a, b] = alpha_in
                beta[a, b] = beta_in
    np.fill_diagonal(alpha, 0.0)   # diagonals are never read; keep them finite
    return alpha, beta


def three_tier_cluster() -> ClusterSpec:
    """One 4x48G machine plus a 2x24G and a 2x16G machine in one datacenter.

    The 48G cards cannot hold the 70B model alone under tensor parallelism
    degree <= 4 at serving batch sizes, and no card can hold an even
    eight-stage share, so good plans are asymmetric.
    """

    g48 = GpuType("g48", mem_limit=48 * GB, mem_bandwidth=768e9, compute=155e12)
    g24 = GpuType("g24", mem_limit=24 * GB, mem_bandwidth=768e9, compute=111e12)
    g16 = GpuType("g16", mem_limit=16 * GB, mem_bandwidth=448e9, compute=76e12)
    devices = (
        [Device(i, "m48", "dc0", g48) for i in range(4)]
        + [Device(i, "m24", "dc0", g24) for i in range(4, 6)]
        + [Device(i, "m16", "dc0", g16) for i in range(6, 8)]
    )
    machines = [[0, 1, 2, 3], [4, 5], [6, 7]]
    alpha, beta = _uniform_links(8, machines, 1e-5, 1e-3, 300e9, 1.25e9)
    return build_cluster(devices, alpha, beta)


def two_region_cluster() -> ClusterSpec:
    """Two 4-GPU machines split across regions with a 1 Gbps WAN between them
    and 100 Gbps links inside each machine.

    Device memory (140 MB) is sized against toy_model so a replica needs at
    least two devices, and the link asymmetry makes same-machine tensor
    parallel pairs the right answer — a small landscape with a known optimum.
    """

    tiny = GpuType("t140m", mem_limit=140e6, mem_bandwidth=300e9, compute=20e12)
    devices = (
        [Device(i, "east0", "east", tiny) for i in range(4)]
        + [Device(i, "west0", "west", tiny) for i in range(4, 8)]
    )
    alpha, beta = _uniform_links(8, [[0, 1, 2, 3], [4, 5, 6, 7]],
                                 5e-6, 50e-3, 12.5e9, 125e6)
    return build_cluster(devices, alpha, beta)


def a100_like_cluster(n: int = 8) -> ClusterSpec:
    """n uniformly linked devices with effective a100-class serving rates.

    Constants (1.2 TB/s scan, 5.5 TFLOP/s effective compute, 15 us / 0.8 GB/s
    effective collective links) are declared fixture values chosen so the cost
    formulas land in a realistic band for 70B-scale serving.
    """

    ref = GpuType("a100e", mem_limit=80 * GB, mem_bandwidth=1.2e12, compute=5.5e12)
    devices = [Device(i, "ref0", "ref", ref) for i in range(n)]
    alpha = np.full((n, n), 1.5e-5)
    beta = np.full((n, n), 8e8)
    np.fill_diagonal(alpha, 0.0)
    return build_cluster(devices, alpha, beta)
