"""Workload generation, FCFS queueing, attainment sweeps."""

from __future__ import annotations

import math

import numpy as np
import pytest

from heteroplan.cluster import GpuType, InputError, ModelSpec, TaskSpec
from heteroplan.costs import GlobalAssignment, StageAssignment, pipeline_cost
from heteroplan.simulate import (
    Request,
    SloConfig,
    WorkloadSpec,
    baseline_from_pipeline,
    generate_workload,
    service_times,
    simulate,
    slo_from_dict,
    sweep_rate,
    sweep_slo_scale,
    workload_from_dict,
)

from oracles import queue_oracle
from test_costs import uniform_cluster


# ---------------------------------------------------------------------------
# a rig whose service time is exactly 1.0 s per request
# (scan 24/48 + flops 48/96 on one device, one layer, no comm)


@pytest.fixture(scope="module")
def unit_rig():
    gpu = GpuType("slow", 1000.0, 48.0, 96.0)
    cluster = uniform_cluster([2], [gpu], alpha=0.0, beta=1e9)
    model = ModelSpec(num_layers=1, hidden_dim=1, bytes_per_param=2)
    task = TaskSpec(batch_size=1, input_len=1, output_len=1)
    slo = SloConfig(slo_scale=2.0, target=0.9, baselines=((task, 0.6),))
    return cluster, model, task, slo


def one_replica(n=1):
    return GlobalAssignment(tuple(
        (StageAssignment((d,), 1),) for d in range(n)
    ))


class TestHandScenarios:
    def test_unit_service_time(self, unit_rig):
        cluster, model, task, _ = unit_rig
        svc = service_times(one_replica(1), model, [task], cluster)
        assert svc[(0, task)] == 1.0

    def test_one_replica_second_request_misses(self, unit_rig):
        cluster, model, task, slo = unit_rig
        requests = [Request(0, 0.0, task), Request(1, 0.5, task)]
        report = simulate(one_replica(1), requests, slo, model, cluster)
        first, second = report.per_request
        assert (first.start, first.finish, first.met) == (0.0, 1.0, True)
        assert (second.start, second.finish, second.met) == (1.0, 2.0, False)
        assert second.finish - second.arrival == 1.5          # over the 1.2 s bound
        assert report.attainment == 0.5

    def test_two_replicas_serve_in_parallel(self, unit_rig):
        cluster, model, task, slo = unit_rig
        requests = [Request(0, 0.0, task), Request(1, 0.5, task)]
        report = simulate(one_replica(2), requests, slo, model, cluster)
        assert [o.met for o in report.per_request] == [True, True]
        assert [o.replica for o in report.per_request] == [0, 1]
        assert report.attainment == 1.0

    def test_zero_pipelines_rejected(self, unit_rig):
        cluster, model, task, slo = unit_rig
        with pytest.raises(ValueError):
            simulate(GlobalAssignment(()), [Request(0, 0.0, task)], slo, model, cluster)

    def test_empty_workload_rejected(self, unit_rig):
        cluster, model, task, slo = unit_rig
        with pytest.raises(ValueError):
            simulate(one_replica(1), [], slo, model, cluster)


class TestGenerateWorkload:
    def test_mean_gap_within_three_standard_errors(self):
        task = TaskSpec(1, 8, 8)
        wl = WorkloadSpec(rate=1.0, seed=123, num_requests=10_000,
                          tasks=((task, 1.0),))
        reqs = generate_workload(wl)
        arrivals = np.array([r.arrival for r in reqs])
        gaps = np.diff(np.concatenate([[0.0], arrivals]))
        se = 1.0 / math.sqrt(len(gaps))       # exponential: sd == mean
        assert abs(gaps.mean() - 1.0) <= 3 * se

    def test_low_rate_mean_gap_near_eight_seconds(self):
        task = TaskSpec(1, 8, 8)
        wl = WorkloadSpec(rate=0.125, seed=5, num_requests=4_000,
                          tasks=((task, 1.0),))
        reqs = generate_workload(wl)
        gaps = np.diff([0.0] + [r.arrival for r in reqs])
        se = 8.0 / math.sqrt(len(gaps))
        assert abs(np.mean(gaps) - 8.0) <= 3 * se

    def test_same_seed_identical_trace(self):
        task = TaskSpec(1, 8, 8)
        wl = WorkloadSpec(rate=2.0, seed=9, num_requests=50, tasks=((task, 1.0),))
        assert generate_workload(wl) == generate_workload(wl)

    def test_duration_horizon_truncates(self):
        task = TaskSpec(1, 8, 8)
        wl = WorkloadSpec(rate=5.0, seed=2, duration_s=30.0, tasks=((task, 1.0),))
        reqs = generate_workload(wl)
        assert reqs and all(r.arrival <= 30.0 for r in reqs)

    def test_task_mix_draws_every_shape(self):
        t1, t2 = TaskSpec(1, 8, 8), TaskSpec(2, 16, 8)
        wl = WorkloadSpec(rate=2.0, seed=3, num_requests=400,
                          tasks=((t1, 0.5), (t2, 0.5)))
        kinds = {r.task for r in generate_workload(wl)}
        assert kinds == {t1, t2}

    def test_validation(self):
        task = TaskSpec(1, 8, 8)
        with pytest.raises(InputError):
            WorkloadSpec(rate=0.0, seed=0, num_requests=5, tasks=((task, 1.0),))
        with pytest.raises(InputError):
            WorkloadSpec(rate=1.0, seed=0, tasks=((task, 1.0),))   # no horizon
        with pytest.raises(InputError):
            WorkloadSpec(rate=1.0, seed=0, num_requests=5, duration_s=5.0,
                         tasks=((task, 1.0),))                     # two horizons
        with pytest.raises(InputError):
            WorkloadSpec(rate=1.0, seed=0, num_requests=5, tasks=())


# ---------------------------------------------------------------------------
# queueing equivalence and conservation properties


def toy_scenario(seed, n_requests=300, rate=220.0):
    cluster = uniform_cluster(
        [2, 2], [GpuType("a", 1e9, 300e9, 20e12), GpuType("b", 1e9, 150e9, 10e12)],
        alpha=5e-6, beta=12.5e9, cross_alpha=1e-4, cross_beta=1e9)
    model = ModelSpec(num_layers=8, hidden_dim=1024, bytes_per_param=2)
    t_small = TaskSpec(1, 32, 16)
    t_big = TaskSpec(2, 64, 32)
    wl = WorkloadSpec(rate=rate, seed=seed, num_requests=n_requests,
                      tasks=((t_small, 0.7), (t_big, 0.3)))
    slo = SloConfig(slo_scale=1.5, target=0.9,
                    baselines=((t_small, 0.012), (t_big, 0.03)))
    assignment = GlobalAssignment((
        (StageAssignment((0, 1), 8),),
        (StageAssignment((2,), 4), StageAssignment((3,), 4)),
    ))
    return cluster, model, wl, slo, assignment


def test_simulator_matches_independent_queueing_engine():
    for seed in range(10):
        cluster, model, wl, slo, assignment = toy_scenario(seed)
        requests = generate_workload(wl)
        report = simulate(assignment, requests, slo, model, cluster)
        svc = service_times(assignment, model, (r.task for r in requests), cluster)
        want = queue_oracle(requests, svc, len(assignment.pipelines), slo)
        got = [(o.index, o.start, o.finish, o.replica, o.met)
               for o in report.per_request]
        assert got == want


def test_conservation_and_work_conservation():
    cluster, model, wl, slo, assignment = toy_scenario(99)
    requests = generate_workload(wl)
    report = simulate(assignment, requests, slo, model, cluster)
    assert sorted(o.index for o in report.per_request) == [r.index for r in requests]
    svc = service_times(assignment, model, (r.task for r in requests), cluster)
    arrival_of = {r.index: r.arrival for r in requests}
    task_of = {r.index: r.task for r in requests}
    per_replica: dict[int, list] = {}
    for o in report.per_request:
        per_replica.setdefault(o.replica, []).append(o)
        assert o.finish >= o.start >= o.arrival
        assert o.finish - o.arrival >= svc[(o.replica, task_of[o.index])] - 1e-12
    for outs in per_replica.values():
        outs.sort(key=lambda o: o.start)
        for prev, cur in zip(outs, outs[1:]):
            assert cur.start >= prev.finish          # no overlapped service
            # work conservation: a delayed start means the replica was busy
            if cur.start > arrival_of[cur.index]:
                assert cur.start == prev.finish


# ---------------------------------------------------------------------------
# sweeps


def test_sweep_slo_scale_monotone_and_saturates():
    cluster, model, wl, slo, assignment = toy_scenario(4)
    requests = generate_workload(wl)
    table = sweep_slo_scale(assignment, requests, [0.125, 0.5, 1, 2, 8, 1e9],
                            slo, model, cluster)
    values = [a for _, a in table]
    assert values == sorted(values)
    assert values[-1] == 1.0


def test_sweep_slo_scale_equals_rerunning_simulate():
    cluster, model, wl, slo, assignment = toy_scenario(6)
    requests = generate_workload(wl)
    table = sweep_slo_scale(assignment, requests, [0.5, 1.0, 2.0], slo, model, cluster)
    for scale, attainment in table:
        rerun = simulate(assignment, requests,
                         SloConfig(scale, slo.target, slo.baselines),
                         model, cluster)
        assert attainment == rerun.attainment


def test_sweep_rate_low_rate_limit_is_one(unit_rig):
    cluster, model, task, _ = unit_rig
    slo = SloConfig(slo_scale=2.0, target=0.9, baselines=((task, 0.6),))
    template = WorkloadSpec(rate=1.0, seed=0, num_requests=40, tasks=((task, 1.0),))
    table, peak = sweep_rate(one_replica(2), slo, [0.001], model, cluster, template)
    assert table[0][1] == 1.0
    assert peak == 0.001


def test_sweep_rate_impossible_bound_is_zero_everywhere(unit_rig):
    cluster, model, task, _ = unit_rig
    slo = SloConfig(slo_scale=0.5, target=0.9, baselines=((task, 0.6),))
    template = WorkloadSpec(rate=1.0, seed=0, num_requests=40, tasks=((task, 1.0),))
    table, peak = sweep_rate(one_replica(2), slo, [0.01, 0.1, 1.0], model,
                             cluster, template)
    assert all(a == 0.0 for _, a in table)    # bound 0.3 s < 1 s service
    assert peak is None


def test_sweep_rate_trend_not_increasing():
    cluster, model, wl, slo, assignment = toy_scenario(1)
    rates = [0.125, 0.5, 2.0, 10.0, 50.0, 220.0, 500.0]
    table, _ = sweep_rate(assignment, slo, rates, model, cluster, wl)
    values = [a for _, a in table]
    inversions = sum(1 for x, y in zip(values, values[1:]) if y > x +  1e-12)
    assert inversions <= 1


# ---------------------------------------------------------------------------
# file schemas


def test_workload_and_slo_dicts_round_trip():
    doc = {
        "schema_version": 1, "rate": 2.5, "seed": 11, "num_requests": 64,
        "tasks": [
            {"batch_size": 1, "input_len": 32, "output_len": 16, "weight": 0.75},
            {"batch_size": 2, "input_len": 64, "output_len": 32, "weight": 0.25},
        ],
    }
    wl = workload_from_dict(doc)
    assert wl.rate == 2.5 and wl.num_requests == 64
    assert wl.dominant_task() == TaskSpec(1, 32, 16)
    slo = slo_from_dict({
        "schema_version": 1, "slo_scale": 1.25, "target": 0.99,
        "baselines": [
            {"batch_size": 1, "input_len": 32, "output_len": 16, "latency_s": 0.01},
        ],
    })
    assert slo.baseline_latency(TaskSpec(1, 32, 16)) == 0.01
    with pytest.raises(InputError):
        slo.baseline_latency(TaskSpec(9, 9, 9))


def test_baseline_from_pipeline_equals_cost(unit_rig):
    cluster, model, task, _ = unit_rig
    pipeline = (StageAssignment((0,), 1),)
    want, _ = pipeline_cost(pipeline, model, task, cluster)
    assert baseline_from_pipeline(pipeline, model, task, cluster) == want
