"""Poisson workload generation and SLO-attainment simulation.

Requests arrive by a seeded Poisson process and are routed, at arrival, to
the replica (pipeline) with the earliest predicted completion, ties to the
lowest replica index.  Each replica serves one request at a time, FCFS; a
request's service time is the cost model's end-to-end latency for its shape
on that pipeline.  A request meets its objective iff

    finish - arrival <= slo_scale * baseline_latency(task shape).

Attainment (the met fraction) is the fitness signal for the planner and the
quantity swept for reporting.  Simulation is deterministic given the seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cluster import InputError, ClusterSpec, ModelSpec, TaskSpec, task_from_dict
from .costs import GlobalAssignment, pipeline_cost

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class WorkloadSpec:
    rate: float                                  # requests/second (Poisson)
    seed: int | tuple[int, ...]                  # tuple form for derived streams
    num_requests: int | None = None              # horizon as a request count ...
    duration_s: float | None = None              # ... or as wall-clock seconds
    tasks: tuple[tuple[TaskSpec, float], ...] = ()   # (shape, weight)

    def __post_init__(self):
        if self.rate <= 0:
            raise InputError("workload rate must be > 0")
        if (self.num_requests is None) == (self.duration_s is None):
            raise InputError("exactly one of num_requests / duration_s is required")
        if self.num_requests is not None and self.num_requests < 1:
            raise InputError("num_requests must be >= 1")
        if self.duration_s is not None and self.duration_s <= 0:
            raise InputError("duration_s must be > 0")
        if not self.tasks or any(w <= 0 for _, w in self.tasks):
            raise InputError("workload needs task shapes with positive weights")

    def dominant_task(self) -> TaskSpec:
        """Highest-weight shape (ties to the first listed); the planning shape."""
        best = max(self.tasks, key=lambda tw: tw[1])
        return best[0]


@dataclass(frozen=True)
class Request:
    index: int
    arrival: float
    task: TaskSpec


@dataclass(frozen=True)
class SloConfig:
    slo_scale: float
    target: float                                 # attainment goal, e.g. 0.99
    baselines: tuple[tuple[TaskSpec, float], ...]  # (shape, reference seconds)

    def __post_init__(self):
        if self.slo_scale <= 0:
            raise InputError("slo_scale must be > 0")
        if not 0 < self.target <= 1:
            raise InputError("target must be in (0, 1]")
        if not self.baselines or any(b <= 0 for _, b in self.baselines):
            raise InputError("baselines must be positive")

    def baseline_latency(self, task: TaskSpec) -> float:
        for shape, secs in self.baselines:
            if shape == task:
                return secs
        raise InputError(f"no baseline latency declared for task shape {task}")


@dataclass(frozen=True)
class RequestOutcome:
    index: int
    arrival: float
    start: float
    finish: float
    replica: int
    met: bool


@dataclass(frozen=True)
class SloReport:
    attainment: float
    per_request: tuple[RequestOutcome, ...]
    mean_latency: float
    peak_rate_estimate: float | None = None


def generate_workload(spec: WorkloadSpec) -> list[Request]:
    """Seeded realization: exponential inter-arrivals, then task-mix draws."""

    seed = list(spec.seed) if isinstance(spec.seed, tuple) else spec.seed
    rng = np.random.default_rng(seed)
    mean_gap = 1.0 / spec.rate
    if spec.num_requests is not None:
        gaps = rng.exponential(mean_gap, spec.num_requests)
        arrivals = np.cumsum(gaps)
    else:
        chunks: list[np.ndarray] = []
        elapsed = 0.0
        while True:
            gaps = rng.exponential(mean_gap, 256)
            arr = elapsed + np.cumsum(gaps)
            chunks.append(arr)
            elapsed = float(arr[-1])
            if elapsed > spec.duration_s:
                break
        arrivals = np.concatenate(chunks)
        arrivals = arrivals[arrivals <= spec.duration_s]
        if arrivals.size == 0:
            return []
    shapes = [t for t, _ in spec.tasks]
    if len(shapes) == 1:
        picks = np.zeros(len(arrivals), dtype=int)
    else:
        w = np.array([w for _, w in spec.tasks], dtype=float)
        picks = rng.choice(len(shapes), size=len(arrivals), p=w / w.sum())
    return [Request(i, float(t), shapes[int(p)])
            for i, (t, p) in enumerate(zip(arrivals, picks))]


def service_times(assignment: GlobalAssignment, model: ModelSpec,
                  tasks: Iterable[TaskSpec], cluster: ClusterSpec) -> dict[tuple[int, TaskSpec], float]:
    shapes = set(tasks)
    table = {}
    for r, pipe in enumerate(assignment.pipelines):
        for task in shapes:
            table[(r, task)] = pipeline_cost(pipe, model, task, cluster)[0]
    return table


def simulate(assignment: GlobalAssignment, requests: Sequence[Request],
             slo: SloConfig, model: ModelSpec, cluster: ClusterSpec) -> SloReport:
    if not assignment.pipelines:
        raise ValueError("assignment has no pipelines to serve requests")
    if not requests:
        raise ValueError("empty workload")
    svc = service_times(assignment, model, (r.task for r in requests), cluster)
    n_rep = len(assignment.pipelines)
    free = [0.0] * n_rep
    outcomes = []
    lat_sum = 0.0
    met_count = 0
    for req in requests:
        best_r = 0
        best_done = math.inf
        for r in range(n_rep):
            done = max(req.arrival, free[r]) + svc[(r, req.task)]
            if done < best_done:
                best_done = done
                best_r = r
        start = max(req.arrival, free[best_r])
        finish = start + svc[(best_r, req.task)]
        free[best_r] = finish
        latency = finish - req.arrival
        met = latency <= slo.slo_scale * slo.baseline_latency(req.task)
        met_count += met
        lat_sum += latency
        outcomes.append(RequestOutcome(req.index, req.arrival, start, finish, best_r, met))
    return SloReport(met_count / len(requests), tuple(outcomes), lat_sum / len(requests))


def sweep_slo_scale(assignment: GlobalAssignment, requests: Sequence[Request],
                    scales: Sequence[float], slo: SloConfig, model: ModelSpec,
                    cluster: ClusterSpec) -> list[tuple[float, float]]:
    """One simulation pass; met flags recomputed per scale from the same trace
    (routing never looks at the SLO, so latencies are scale-independent)."""

    base = simulate(assignment, requests, slo, model, cluster)
    by_index = {r.index: r.task for r in requests}
    out = []
    for scale in scales:
        met = sum(
            1 for o in base.per_request
            if o.finish - o.arrival <= scale * slo.baseline_latency(by_index[o.index])
        )
        out.append((scale, met / len(base.per_request)))
    return out


def sweep_rate(assignment: GlobalAssignment, slo: SloConfig, rates: Sequence[float],
               model: ModelSpec, cluster: ClusterSpec,
               template: WorkloadSpec) -> tuple[list[tuple[float, float]], float | None]:
    """Attainment per rate (per-rate derived seeds) and the peak rate meeting
    the target, if any."""

    out = []
    peak = None
    base_seed = template.seed if isinstance(template.seed, tuple) else (template.seed,)
    for i, rate in enumerate(rates):
        spec = WorkloadSpec(rate=rate, seed=base_seed + (i,),
                            num_requests=template.num_requests,
                            duration_s=template.duration_s, tasks=template.tasks)
        requests = generate_workload(spec)
        report = simulate(assignment, requests, slo, model, cluster)
        out.append((rate, report.attainment))
        if report.attainment >= slo.target:
            peak = rate if peak is None else max(peak, rate)
    return out, peak


def load_workload(path) -> WorkloadSpec:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: {exc}") from exc
    return workload_from_dict(doc)


def workload_from_dict(doc: Mapping) -> WorkloadSpec:
    try:
        tasks = tuple(
            (task_from_dict(t), float(t.get("weight", 1.0))) for t in doc["tasks"]
        )
        return WorkloadSpec(
            rate=float(doc["rate"]),
            seed=int(doc["seed"]),
            num_requests=int(doc["num_requests"]) if "num_requests" in doc else None,
            duration_s=float(doc["duration_s"]) if "duration_s" in doc else None,
            tasks=tasks,
        )
    except InputError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad workload document: {exc}") from exc


def load_slo(path) -> SloConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: {exc}") from exc
    return slo_from_dict(doc)


def slo_from_dict(doc: Mapping) -> SloConfig:
    try:
        baselines = tuple(
            (task_from_dict(b), float(b["latency_s"])) for b in doc["baselines"]
        )
        return SloConfig(float(doc["slo_scale"]), float(doc["target"]), baselines)
    except InputError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad slo document: {exc}") from exc


def baseline_from_pipeline(pipeline, model: ModelSpec, task: TaskSpec,
                           cluster: ClusterSpec) -> float:
    """Helper: derive a baseline latency from a reference deployment."""
    return pipeline_cost(pipeline, model, task, cluster)[0]
