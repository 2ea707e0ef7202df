#!/usr/bin/env python3
"""Emit ready-to-run input bundles for the CLI.

Each bundle directory gets cluster.json / model.json / workload.json /
slo.json / task.json matching one of the built-in scenarios:

  three_tier   48G+24G+16G pool serving the 80-layer model; the interesting
               case where every symmetric layout is memory-infeasible
  two_region   two 4-GPU machines behind a slow WAN with a tiny model; small
               enough to cross-check the planner against exhaustive search
  a100_node    one 8-GPU uniform node for the reference latency table
"""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

from heteroplan.cluster import cluster_to_dict
from heteroplan.presets import (a100_like_cluster, llama70b,
                                three_tier_cluster, toy_model,
                                two_region_cluster)

log = logging.getLogger("make_inputs")


def model_doc(model):
    return {"schema_version": 1, "num_layers": model.num_layers,
            "hidden_dim": model.hidden_dim,
            "bytes_per_param": model.bytes_per_param}


def task_doc(batch_size, input_len, output_len):
    return {"schema_version": 1, "batch_size": batch_size,
            "input_len": input_len, "output_len": output_len}


def workload_doc(rate, seed, num_requests, task, weight=1.0):
    return {"schema_version": 1, "rate": rate, "seed": seed,
            "num_requests": num_requests,
            "tasks": [dict(task, weight=weight)]}


def slo_doc(slo_scale, target, task, baseline_s):
    entry = {k: task[k] for k in ("batch_size", "input_len", "output_len")}
    return {"schema_version": 1, "slo_scale": slo_scale, "target": target,
            "baselines": [dict(entry, latency_s=baseline_s)]}


def bundles():
    # heavy decode-dominated batches; only the asymmetric [4,2,2] layout
    # survives the per-device memory check on this pool
    big = task_doc(48, 512, 256)
    yield "three_tier", {
        "cluster.json": cluster_to_dict(three_tier_cluster()),
        "model.json": model_doc(llama70b()),
        "task.json": big,
        "workload.json": workload_doc(0.008, 11, 48, big),
        "slo.json": slo_doc(1.5, 0.85, big, 40.0),
    }

    small = task_doc(1, 32, 16)
    yield "two_region", {
        "cluster.json": cluster_to_dict(two_region_cluster()),
        "model.json": model_doc(toy_model()),
        "task.json": small,
        "workload.json": workload_doc(220.0, 7, 250, small),
        "slo.json": slo_doc(1.5, 0.99, small, 0.012),
    }

    ref = task_doc(1, 512, 64)
    yield "a100_node", {
        "cluster.json": cluster_to_dict(a100_like_cluster(8)),
        "model.json": model_doc(llama70b()),
        "task.json": ref,
        "workload.json": workload_doc(0.05, 3, 200, ref),
        "slo.json": slo_doc(2.0, 0.9, ref, 10.0),
    }


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", default="inputs",
                        help="directory to create the bundles under")
    args = parser.parse_args(argv)
    root = Path(args.out_dir)
    for name, files in bundles():
        bundle = root / name
        bundle.mkdir(parents=True, exist_ok=True)
        for fname, doc in files.items():
            (bundle / fname).write_text(json.dumps(doc, indent=2) + "\n")
        log.info("wrote %s (%s)", bundle, ", ".join(sorted(files)))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
