#!/usr/bin/env python3
"""Structured vs unstructured mutation convergence on the two-region pool.

Runs the paired-seed ablation (same budget, same evaluation, only the
offspring operator differs) and prints the per-seed finals from the summary
the CLI writes.
"""

from __future__ import annotations

import argparse
import csv
import logging
from pathlib import Path

from heteroplan.cli import main as cli

import make_inputs

log = logging.getLogger("ablation")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", default="results/ablation")
    parser.add_argument("--seeds", default="0,1,2,3,4,5,6,7,8,9")
    parser.add_argument("--pop", type=int, default=14)
    parser.add_argument("--gens", type=int, default=20)
    args = parser.parse_args(argv)

    out = Path(args.out_dir)
    inputs = out / "inputs"
    if make_inputs.main(["--out-dir", str(inputs)]) != 0:
        return 1
    bundle = inputs / "two_region"
    rc = cli(["ablate",
              "--cluster", str(bundle / "cluster.json"),
              "--model", str(bundle / "model.json"),
              "--workload", str(bundle / "workload.json"),
              "--slo", str(bundle / "slo.json"),
              "--out-dir", str(out), "--pop", str(args.pop),
              "--gens", str(args.gens), "--seeds", args.seeds])
    if rc != 0:
        return rc

    with open(out / "summary.csv") as fh:
        for row in csv.DictReader(fh):
            log.info("seed %s: structured %s random %s (plateau %s vs %s)",
                     row["seed"], row["structured_final"], row["random_final"],
                     row["structured_plateau_gen"], row["random_plateau_gen"])
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
