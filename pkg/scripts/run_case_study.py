#!/usr/bin/env python3
"""Plan and stress the mixed 48G/24G/16G pool end to end.

Generates the three_tier input bundle, searches for a plan, prints the
per-stage cost breakdown, and simulates the planned assignment against the
workload (including SLO-scale and rate sweeps).  Everything lands under
--out-dir; rerunning with the same arguments reproduces the bundle bit for
bit (see manifest.json).
"""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

from heteroplan.cli import main as cli

import make_inputs

log = logging.getLogger("case_study")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", default="results/case_study")
    parser.add_argument("--pop", type=int, default=16)
    parser.add_argument("--gens", type=int, default=30)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    out = Path(args.out_dir)
    inputs = out / "inputs"
    if make_inputs.main(["--out-dir", str(inputs)]) != 0:
        return 1
    bundle = inputs / "three_tier"
    common = ["--cluster", str(bundle / "cluster.json"),
              "--model", str(bundle / "model.json")]
    wl = ["--workload", str(bundle / "workload.json"),
          "--slo", str(bundle / "slo.json")]

    plan_dir = out / "plan"
    rc = cli(["plan", *common, *wl, "--out-dir", str(plan_dir),
              "--pop", str(args.pop), "--gens", str(args.gens),
              "--seed", str(args.seed)])
    if rc != 0:
        return rc

    plan = plan_dir / "plan.json"
    rc = cli(["costs", *common, "--task", str(bundle / "task.json"),
              "--plan", str(plan), "--out-dir", str(out / "costs")])
    if rc != 0:
        return rc

    rc = cli(["simulate", *common, *wl, "--plan", str(plan),
              "--out-dir", str(out / "simulate"),
              "--scales", "0.25,0.5,0.75,1,1.5,2,4",
              "--rates", "0.001,0.002,0.004,0.008,0.016,0.032"])
    if rc != 0:
        return rc

    doc = json.loads(plan.read_text())
    log.info("planned %s at fitness %.4f; reports under %s",
             [p["notation"] for p in doc["pipelines"]], doc["fitness"], out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
