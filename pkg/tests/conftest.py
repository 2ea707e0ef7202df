"""Shared fixtures: synthetic clusters, model/task shapes, and tmp input files."""

from __future__ import annotations

import json
import sys

import pytest

from heteroplan.cluster import ModelSpec, TaskSpec, cluster_to_dict
from heteroplan.presets import (
    a100_like_cluster,
    llama70b,
    three_tier_cluster,
    toy_model,
    two_region_cluster,
)


@pytest.fixture(scope="session")
def three_tier():
    return three_tier_cluster()


@pytest.fixture(scope="session")
def two_region():
    return two_region_cluster()


@pytest.fixture(scope="session")
def a100_like():
    return a100_like_cluster()


@pytest.fixture(scope="session")
def llama():
    return llama70b()


@pytest.fixture(scope="session")
def toy():
    return toy_model()


@pytest.fixture(scope="session")
def worked_task():
    # the shape used by the worked cost examples
    return TaskSpec(batch_size=1, input_len=128, output_len=64)


def write_json(path, doc):
    path.write_text(json.dumps(doc, indent=2))
    return str(path)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance-criterion result lines after capture is torn down."""

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None) if mod else None
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)


@pytest.fixture
def input_files(tmp_path, two_region):
    """Standard CLI input bundle on the toy two-region scenario."""

    cluster_path = write_json(tmp_path / "cluster.json", cluster_to_dict(two_region))
    model_path = write_json(tmp_path / "model.json", {
        "schema_version": 1, "num_layers": 8, "hidden_dim": 1024, "bytes_per_param": 2,
    })
    task = {"batch_size": 1, "input_len": 32, "output_len": 16}
    workload_path = write_json(tmp_path / "workload.json", {
        "schema_version": 1, "rate": 300.0, "seed": 7, "num_requests": 300,
        "tasks": [dict(task, weight=1.0)],
    })
    slo_path = write_json(tmp_path / "slo.json", {
        "schema_version": 1, "slo_scale": 1.5, "target": 0.99,
        "baselines": [dict(task, latency_s=0.012)],
    })
    return {
        "cluster": cluster_path,
        "model": model_path,
        "workload": workload_path,
        "slo": slo_path,
        "dir": tmp_path,
    }
