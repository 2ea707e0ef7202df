"""Closed-form per-stage cost and memory formulas, and plan structures.

A stage is a bucket-homogeneous device set serving ``num_layers`` transformer
blocks with tensor parallelism of degree ``len(devices)``.  For a request of
shape (b, s_in, s_out) the model charges, per stage:

  compute     max_d 12 H^2 B s_out / (|d| m_d) * l          (decode weight scan)
            + max_d 24 b (s_in + s_out) H^2 / (|d| c_d) * l (tensor-core FLOPs)

  TP comm     max_d sum_{d'!=d} (a[d,d'] + b s_in H B / (|d| b[d,d'])) * 4 l
            + max_d sum_{d'!=d} (a[d,d'] + b H B / (|d| b[d,d'])) * 4 s_out l

  PP comm     min over cross links (a + b s_in H B / beta)
            + min over cross links (a + b H B / beta) * s_out
              (between consecutive stages; the two minima are independent)

  memory      (12 H^2 B / |d| + 2 b (s_in+s_out) H B / |d|) * l
            + 4 b (s_in+s_out) H B                          bytes per device

The TP terms follow a bulk-synchronous view of the two per-layer AllReduces
(reduce-scatter + all-gather = 4 supersteps per layer); the PP terms assume
activations travel over the single fastest cross-stage link.  All functions
are pure; no hidden calibration constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .cluster import ClusterSpec, ModelSpec, TaskSpec


class InfeasibleError(RuntimeError):
    """A plan violates a hard constraint (memory, layer budget); CLI exit 3."""


class InternalError(RuntimeError):
    """An internal invariant was violated; CLI exit 4."""


@dataclass(frozen=True)
class StageAssignment:
    devices: tuple[int, ...]   # device ids, all from one (machine, type) bucket
    num_layers: int

    def __post_init__(self):
        if not self.devices:
            raise ValueError("stage needs at least one device")
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")

    @property
    def tp_degree(self) -> int:
        return len(self.devices)


@dataclass(frozen=True)
class StageCostBreakdown:
    comp: float
    comm_tp: float
    comm_pp_to_next: float   # 0.0 for the last stage
    mem_per_device: float

    def total(self) -> float:
        return self.comp + self.comm_tp + self.comm_pp_to_next


@dataclass(frozen=True)
class MemoryVerdict:
    feasible: bool
    margins: dict[int, float]          # device id -> limit - footprint (bytes)
    violations: tuple[int, ...]        # device ids over their limit, ascending


Pipeline = tuple[StageAssignment, ...]


@dataclass(frozen=True)
class GlobalAssignment:
    """A full serving plan: disjoint pipelines, each an ordered stage list."""

    pipelines: tuple[Pipeline, ...]
    provenance: object = None   # genome that produced it, when it came from search

    def all_devices(self) -> list[int]:
        out: list[int] = []
        for pipe in self.pipelines:
            for stage in pipe:
                out.extend(stage.devices)
        return out


def plan_notation(pipeline: Sequence[StageAssignment]) -> str:
    """Compact per-pipeline notation: TP degrees by stage, e.g. "[4,2,2]"."""
    return "[" + ",".join(str(s.tp_degree) for s in pipeline) + "]"


def _check_stage(stage: StageAssignment, cluster: ClusterSpec) -> None:
    buckets = {cluster.bucket_of(d) for d in stage.devices}
    if len(buckets) != 1:
        raise ValueError(f"stage devices {stage.devices} span buckets {sorted(buckets)}")


def comp_cost(stage: StageAssignment, model: ModelSpec, task: TaskSpec,
              cluster: ClusterSpec) -> float:
    """Per-request compute seconds for one stage (weight scan + FLOPs)."""

    _check_stage(stage, cluster)
    n = stage.tp_degree
    l = stage.num_layers
    hsq = model.hidden_dim * model.hidden_dim
    scan_num = 12 * hsq * model.bytes_per_param * task.output_len
    flop_num = 24 * task.batch_size * (task.input_len + task.output_len) * hsq
    scan = max(scan_num / (n * cluster.device(d).gpu_type.mem_bandwidth)
               for d in stage.devices)
    flop = max(flop_num / (n * cluster.device(d).gpu_type.compute)
               for d in stage.devices)
    return scan * l + flop * l


def tp_comm_cost(stage: StageAssignment, model: ModelSpec, task: TaskSpec,
                 cluster: ClusterSpec) -> float:
    """AllReduce seconds across the stage; exactly 0.0 for a single device."""

    _check_stage(stage, cluster)
    n = stage.tp_degree
    if n == 1:
        return 0.0
    alpha, beta = cluster.alpha, cluster.beta
    prefill_bytes = task.batch_size * task.input_len * model.hidden_dim * model.bytes_per_param
    decode_bytes = task.batch_size * model.hidden_dim * model.bytes_per_param
    worst_pre = 0.0
    worst_dec = 0.0
    for d in stage.devices:
        pre = 0.0
        dec = 0.0
        for dp in stage.devices:
            if dp == d:
                continue
            pre += alpha[d, dp] + prefill_bytes / (n * beta[d, dp])
            dec += alpha[d, dp] + decode_bytes / (n * beta[d, dp])
        worst_pre = max(worst_pre, pre)
        worst_dec = max(worst_dec, dec)
    l = stage.num_layers
    return worst_pre * 4 * l + worst_dec * 4 * task.output_len * l


def pp_comm_cost(stage: StageAssignment, next_stage: StageAssignment,
                 model: ModelSpec, task: TaskSpec, cluster: ClusterSpec) -> float:
    """Activation-passing seconds over the best cross link between two stages."""

    _check_stage(stage, cluster)
    _check_stage(next_stage, cluster)
    alpha, beta = cluster.alpha, cluster.beta
    prefill_bytes = task.batch_size * task.input_len * model.hidden_dim * model.bytes_per_param
    decode_bytes = task.batch_size * model.hidden_dim * model.bytes_per_param
    best_pre = math.inf
    best_dec = math.inf
    for d in stage.devices:
        for dp in next_stage.devices:
            best_pre = min(best_pre, alpha[d, dp] + prefill_bytes / beta[d, dp])
            best_dec = min(best_dec, alpha[d, dp] + decode_bytes / beta[d, dp])
    return best_pre + best_dec * task.output_len


def mem_footprint(stage: StageAssignment, model: ModelSpec, task: TaskSpec) -> float:
    """Bytes needed on each device of the stage (weights shard + KV + buffers)."""

    n = stage.tp_degree
    hsq = model.hidden_dim * model.hidden_dim
    act_bytes = task.batch_size * (task.input_len + task.output_len) * model.hidden_dim \
        * model.bytes_per_param
    per_layer = (12 * hsq * model.bytes_per_param + 2 * act_bytes) / n
    return per_layer * stage.num_layers + 4 * act_bytes


def check_memory(pipeline: Sequence[StageAssignment], model: ModelSpec,
                 task: TaskSpec, cluster: ClusterSpec) -> MemoryVerdict:
    """Per-device feasibility verdict; an empty pipeline is vacuously feasible."""

    margins: dict[int, float] = {}
    bad: list[int] = []
    for stage in pipeline:
        need = mem_footprint(stage, model, task)
        for d in stage.devices:
            margin = cluster.device(d).gpu_type.mem_limit - need
            margins[d] = margin
            if margin < 0:
                bad.append(d)
    return MemoryVerdict(not bad, margins, tuple(sorted(bad)))


def stage_breakdowns(pipeline: Sequence[StageAssignment], model: ModelSpec,
                     task: TaskSpec, cluster: ClusterSpec) -> list[StageCostBreakdown]:
    """Per-stage costs without feasibility enforcement (reporting path)."""

    out = []
    for j, stage in enumerate(pipeline):
        pp = 0.0
        if j + 1 < len(pipeline):
            pp = pp_comm_cost(stage, pipeline[j + 1], model, task, cluster)
        out.append(StageCostBreakdown(
            comp=comp_cost(stage, model, task, cluster),
            comm_tp=tp_comm_cost(stage, model, task, cluster),
            comm_pp_to_next=pp,
            mem_per_device=mem_footprint(stage, model, task),
        ))
    return out


def pipeline_cost(pipeline: Sequence[StageAssignment], model: ModelSpec,
                  task: TaskSpec, cluster: ClusterSpec) -> tuple[float, list[StageCostBreakdown]]:
    """End-to-end per-request seconds for one pipeline, plus the breakdown.

    Raises ``ValueError`` if layer counts do not sum to the model depth or
    stages overlap, and ``InfeasibleError`` on any per-device memory
    violation (never silently clamped).
    """

    if not pipeline:
        raise ValueError("pipeline has no stages")
    total_layers = sum(s.num_layers for s in pipeline)
    if total_layers != model.num_layers:
        raise ValueError(f"stage layers sum to {total_layers}, model has {model.num_layers}")
    seen: set[int] = set()
    for stage in pipeline:
        for d in stage.devices:
            if d in seen:
                raise ValueError(f"device {d} appears in more than one stage")
            seen.add(d)
    verdict = check_memory(pipeline, model, task, cluster)
    if not verdict.feasible:
        raise InfeasibleError(f"memory limit exceeded on devices {verdict.violations}")
    breakdown = stage_breakdowns(pipeline, model, task, cluster)
    return sum(b.total() for b in breakdown), breakdown


def prefill_decode_estimate(pipeline: Sequence[StageAssignment], model: ModelSpec,
                            task: TaskSpec, cluster: ClusterSpec) -> tuple[float, float]:
    """Split the pipeline cost into prefill and decode seconds.

    The split regroups the same terms pipeline_cost sums: prefill gets the
    s_in-scaled FLOP/comm terms, decode gets the weight-scan plus the
    s_out-scaled terms, so prefill + decode equals the total exactly.
    """

    alpha, beta = cluster.alpha, cluster.beta
    hsq = model.hidden_dim * model.hidden_dim
    bp = model.bytes_per_param
    pre_bytes = task.batch_size * task.input_len * model.hidden_dim * bp
    dec_bytes = task.batch_size * model.hidden_dim * bp
    prefill = 0.0
    decode = 0.0
    for j, stage in enumerate(pipeline):
        _check_stage(stage, cluster)
        n = stage.tp_degree
        l = stage.num_layers
        prefill += l * max(24 * task.batch_size * task.input_len * hsq
                           / (n * cluster.device(d).gpu_type.compute)
                           for d in stage.devices)
        decode += l * max(12 * hsq * bp * task.output_len
                          / (n * cluster.device(d).gpu_type.mem_bandwidth)
                          for d in stage.devices)
        decode += l * max(24 * task.batch_size * task.output_len * hsq
                          / (n * cluster.device(d).gpu_type.compute)
                          for d in stage.devices)
        if n > 1:
            worst_pre = max(sum(alpha[d, dp] + pre_bytes / (n * beta[d, dp])
                                for dp in stage.devices if dp != d)
                            for d in stage.devices)
            worst_dec = max(sum(alpha[d, dp] + dec_bytes / (n * beta[d, dp])
                                for dp in stage.devices if dp != d)
                            for d in stage.devices)
            prefill += worst_pre * 4 * l
            decode += worst_dec * 4 * task.output_len * l
        if j + 1 < len(pipeline):
            nxt = pipeline[j + 1]
            prefill += min(alpha[d, dp] + pre_bytes / beta[d, dp]
                           for d in stage.devices for dp in nxt.devices)
            decode += min(alpha[d, dp] + dec_bytes / beta[d, dp]
                          for d in stage.devices for dp in nxt.devices) * task.output_len
    return prefill, decode


def assert_valid_assignment(assignment: GlobalAssignment, model: ModelSpec,
                            task: TaskSpec, cluster: ClusterSpec) -> None:
    """Cheap construction-side sanity check before a plan is emitted."""

    seen: set[int] = set()
    for pipe in assignment.pipelines:
        layers = sum(s.num_layers for s in pipe)
        if layers != model.num_layers:
            raise InternalError(f"pipeline layers sum to {layers} != {model.num_layers}")
        for stage in pipe:
            for d in stage.devices:
                if d in seen:
                    raise InternalError(f"device {d} assigned twice across pipelines")
                seen.add(d)
        if not check_memory(pipe, model, task, cluster).feasible:
            raise InternalError("emitted pipeline violates memory limits")
