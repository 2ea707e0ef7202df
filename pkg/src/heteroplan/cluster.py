"""Typed model of a heterogeneous GPU pool and of the model being served.

A cluster is a flat list of devices plus two dense N x N link matrices
(latency in seconds, bandwidth in bytes/s).  Devices are folded into
(machine, type) buckets: a tensor-parallel stage is always carved out of a
single bucket, so the bucket decomposition is the granularity the planner
actually searches over.  Bucket multisets are passed around as plain count
tuples ("type vectors"), one entry per bucket.

Unit discipline: bytes, bytes/second, seconds, FLOP/s everywhere.  File
loaders do whatever conversion is needed at parse time; nothing downstream
converts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

SCHEMA_VERSION = 1

#: tau -- a multiset of devices, expressed as one count per cluster bucket.
TypeVector = tuple[int, ...]


class InputError(ValueError):
    """Malformed or inconsistent input (files or programmatic specs); CLI exit 2."""


@dataclass(frozen=True)
class GpuType:
    type_id: str
    mem_limit: float       # bytes
    mem_bandwidth: float   # bytes/s
    compute: float         # FLOP/s at serving precision

    def __post_init__(self):
        if min(self.mem_limit, self.mem_bandwidth, self.compute) <= 0:
            raise InputError(f"GPU type {self.type_id!r}: limits must be positive")


@dataclass(frozen=True)
class Device:
    device_id: int
    machine_id: str
    region_id: str
    gpu_type: GpuType


@dataclass(frozen=True)
class Bucket:
    """All devices of one GPU type sitting on one machine."""

    machine_id: str
    type_id: str
    device_ids: tuple[int, ...]

    @property
    def count(self) -> int:
        return len(self.device_ids)


@dataclass(frozen=True, eq=False)
class ClusterSpec:
    devices: tuple[Device, ...]
    alpha: np.ndarray        # seconds, alpha[d, d']
    beta: np.ndarray         # bytes/s, beta[d, d']
    buckets: tuple[Bucket, ...]
    _device_bucket: tuple[int, ...] = field(repr=False)

    @property
    def n_devices(self) -> int:
        return len(self.devices)

    @property
    def capacities(self) -> TypeVector:
        return tuple(b.count for b in self.buckets)

    def bucket_of(self, device_id: int) -> int:
        if not 0 <= device_id < len(self.devices):
            raise InputError(f"unknown device id {device_id}")
        return self._device_bucket[device_id]

    def device(self, device_id: int) -> Device:
        return self.devices[device_id]

    def total_memory(self) -> float:
        return sum(d.gpu_type.mem_limit for d in self.devices)


def build_cluster(devices: Sequence[Device], alpha, beta) -> ClusterSpec:
    """Validate raw parts and derive the (machine, type) buckets."""

    devices = tuple(devices)
    n = len(devices)
    if n == 0:
        raise InputError("cluster has no devices")
    ids = sorted(d.device_id for d in devices)
    if ids != list(range(n)):
        raise InputError(f"device ids must be exactly 0..{n - 1}, got {ids}")
    devices = tuple(sorted(devices, key=lambda d: d.device_id))

    region_of: dict[str, str] = {}
    for d in devices:
        prev = region_of.setdefault(d.machine_id, d.region_id)
        if prev != d.region_id:
            raise InputError(f"machine {d.machine_id!r} spans regions {prev!r} and {d.region_id!r}")

    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    for name, m in (("alpha", alpha), ("beta", beta)):
        if m.shape != (n, n):
            raise InputError(f"{name} matrix must be {n}x{n}, got {m.shape}")
    off = ~np.eye(n, dtype=bool)
    if np.any(alpha[off] < 0):
        raise InputError("alpha entries must be >= 0")
    if np.any(beta[off] <= 0):
        raise InputError("beta entries must be > 0 for distinct device pairs")
    alpha.setflags(write=False)
    beta.setflags(write=False)

    # Buckets in first-appearance order over device ids.
    order: list[tuple[str, str]] = []
    members: dict[tuple[str, str], list[int]] = {}
    for d in devices:
        key = (d.machine_id, d.gpu_type.type_id)
        if key not in members:
            order.append(key)
            members[key] = []
        members[key].append(d.device_id)
    buckets = tuple(Bucket(m, t, tuple(members[(m, t)])) for m, t in order)
    device_bucket = [0] * n
    for i, b in enumerate(buckets):
        for did in b.device_ids:
            device_bucket[did] = i
    return ClusterSpec(devices, alpha, beta, buckets, tuple(device_bucket))


def cluster_from_dict(doc: Mapping) -> ClusterSpec:
    try:
        types = {
            tid: GpuType(tid, float(t["mem_limit_bytes"]), float(t["mem_bandwidth_Bps"]),
                         float(t["compute_flops"]))
            for tid, t in doc["types"].items()
        }
        devices = []
        seen = set()
        for entry in doc["devices"]:
            did = int(entry["id"])
            if did in seen:
                raise InputError(f"duplicate device id {did}")
            seen.add(did)
            tid = entry["type"]
            if tid not in types:
                raise InputError(f"device {did} references unknown type {tid!r}")
            devices.append(Device(did, str(entry["machine"]), str(entry["region"]), types[tid]))
        return build_cluster(devices, doc["alpha_s"], doc["beta_Bps"])
    except InputError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad cluster document: {exc}") from exc


def cluster_to_dict(cluster: ClusterSpec) -> dict:
    """Serialize back to the file schema (round-trip stable)."""

    types = {}
    for d in cluster.devices:
        t = d.gpu_type
        types[t.type_id] = {
            "mem_limit_bytes": t.mem_limit,
            "mem_bandwidth_Bps": t.mem_bandwidth,
            "compute_flops": t.compute,
        }
    return {
        "schema_version": SCHEMA_VERSION,
        "devices": [
            {"id": d.device_id, "machine": d.machine_id, "region": d.region_id,
             "type": d.gpu_type.type_id}
            for d in cluster.devices
        ],
        "types": types,
        "alpha_s": cluster.alpha.tolist(),
        "beta_Bps": cluster.beta.tolist(),
    }


def load_cluster(path) -> ClusterSpec:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: {exc}") from exc
    return cluster_from_dict(doc)


def remove_devices(cluster: ClusterSpec, departed: Iterable[int]) -> tuple[ClusterSpec, dict[int, int]]:
    """Drop devices and reindex survivors to 0..N'-1.

    Returns the shrunken cluster and the old-id -> new-id mapping.
    """

    gone = set(departed)
    for did in gone:
        if not 0 <= did < cluster.n_devices:
            raise InputError(f"cannot remove unknown device id {did}")
    keep = [d.device_id for d in cluster.devices if d.device_id not in gone]
    if not keep:
        raise InputError("cannot remove every device")
    id_map = {old: new for new, old in enumerate(keep)}
    devices = [
        Device(id_map[d.device_id], d.machine_id, d.region_id, d.gpu_type)
        for d in cluster.devices if d.device_id in id_map
    ]
    idx = np.array(keep)
    sub = build_cluster(devices, cluster.alpha[np.ix_(idx, idx)], cluster.beta[np.ix_(idx, idx)])
    return sub, id_map


@dataclass(frozen=True)
class ModelSpec:
    num_layers: int    # L, transformer blocks
    hidden_dim: int    # H
    bytes_per_param: int

    def __post_init__(self):
        if self.num_layers < 1 or self.hidden_dim < 1:
            raise InputError("model dimensions must be >= 1")
        if self.bytes_per_param not in (1, 2, 4):
            raise InputError("bytes_per_param must be 1, 2 or 4")

    def param_bytes(self) -> int:
        """Total parameter bytes across all layers (12 H^2 per layer)."""
        return 12 * self.hidden_dim * self.hidden_dim * self.bytes_per_param * self.num_layers


@dataclass(frozen=True)
class TaskSpec:
    batch_size: int
    input_len: int
    output_len: int

    def __post_init__(self):
        if min(self.batch_size, self.input_len, self.output_len) < 1:
            raise InputError("task shape fields must be >= 1")


def load_model(path) -> ModelSpec:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: {exc}") from exc
    try:
        return ModelSpec(int(doc["num_layers"]), int(doc["hidden_dim"]), int(doc["bytes_per_param"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad model document: {exc}") from exc


def task_from_dict(doc: Mapping) -> TaskSpec:
    try:
        return TaskSpec(int(doc["batch_size"]), int(doc["input_len"]), int(doc["output_len"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad task document: {exc}") from exc


def load_task(path) -> TaskSpec:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: {exc}") from exc
    return task_from_dict(doc)


def check_type_vector(cluster: ClusterSpec, tv: TypeVector) -> None:
    caps = cluster.capacities
    if len(tv) != len(caps):
        raise InputError(f"type vector has {len(tv)} entries for {len(caps)} buckets")
    for k, (c, cap) in enumerate(zip(tv, caps)):
        if not 0 <= c <= cap:
            raise InputError(f"bucket {k}: count {c} outside [0, {cap}]")
