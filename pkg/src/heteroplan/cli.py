"""Command-line entry points: plan, replan, simulate, dp, costs, ablate.

Every run that writes an output bundle also writes a ``manifest.json``
recording the tool version, sha256 digests of the input files, the master
seed, and the resolved search settings — reruns with an identical manifest
(modulo wall-clock duration) produce identical outputs.

Exit codes: 0 success, 2 malformed input, 3 infeasible pool/plan, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .cluster import (InputError, load_cluster, load_model, load_task,
                      cluster_to_dict, remove_devices)
from .costs import (GlobalAssignment, InfeasibleError, InternalError,
                    StageAssignment, check_memory, plan_notation,
                    stage_breakdowns)
from .dp import solve_pipeline
from .genetic import (InfeasiblePoolError, SearchConfig, evolve,
                      random_mutation_baseline)
from .genetic import replan as warm_replan
from .simulate import (generate_workload, load_slo, load_workload, simulate,
                       sweep_rate, sweep_slo_scale)

log = logging.getLogger("heteroplan")

PLAN_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# small IO helpers


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _parse_ints(text: str, what: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip() != "")
    except ValueError as exc:
        raise InputError(f"bad {what} list {text!r}: {exc}") from exc


def _parse_floats(text: str, what: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip() != "")
    except ValueError as exc:
        raise InputError(f"bad {what} list {text!r}: {exc}") from exc


def plan_to_dict(assignment: GlobalAssignment, extra: dict | None = None) -> dict:
    doc = {
        "schema_version": PLAN_SCHEMA_VERSION,
        "pipelines": [
            {
                "notation": plan_notation(pipe),
                "stages": [
                    {"devices": list(s.devices), "tp_degree": s.tp_degree,
                     "layers": s.num_layers}
                    for s in pipe
                ],
            }
            for pipe in assignment.pipelines
        ],
    }
    if extra:
        doc.update(extra)
    return doc


def plan_from_dict(doc) -> GlobalAssignment:
    try:
        pipelines = []
        for pipe in doc["pipelines"]:
            stages = tuple(
                StageAssignment(tuple(int(d) for d in st["devices"]), int(st["layers"]))
                for st in pipe["stages"]
            )
            pipelines.append(stages)
        return GlobalAssignment(tuple(pipelines))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad plan document: {exc}") from exc


def load_plan(path) -> GlobalAssignment:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: {exc}") from exc
    return plan_from_dict(doc)


def _manifest(args, command: str, config: SearchConfig | None,
              input_paths: dict, duration_s: float) -> dict:
    return {
        "schema_version": 1,
        "tool_version": __version__,
        "command": command,
        "inputs": {
            name: {"path": str(p), "sha256": _sha256(p)}
            for name, p in input_paths.items() if p is not None
        },
        "seed": getattr(args, "seed", None),
        "search_config": dataclasses.asdict(config) if config else None,
        "resolved_args": {
            k: v for k, v in sorted(vars(args).items()) if k != "func"
        },
        "duration_s": duration_s,
    }


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _search_config(args) -> SearchConfig:
    return SearchConfig(
        population_size=args.pop,
        generations=args.gens,
        seed=args.seed,
        tp_candidates=_parse_ints(args.tp_candidates, "tp-candidates"),
    )


def _write_history(path: Path, history) -> None:
    _write_csv(path, ["generation", "best_fitness", "mean_fitness"],
               [(h.generation, f"{h.best_fitness:.6f}", f"{h.mean_fitness:.6f}")
                for h in history])


# ---------------------------------------------------------------------------
# subcommands


def cmd_plan(args) -> int:
    cluster = load_cluster(args.cluster)
    model = load_model(args.model)
    workload = load_workload(args.workload)
    slo = load_slo(args.slo)
    config = _search_config(args)
    out = _out_dir(args)
    t0 = time.perf_counter()
    result = evolve(cluster, model, workload, slo, config, threads=args.threads)
    duration = time.perf_counter() - t0
    _write_json(out / "plan.json", plan_to_dict(result.best, {
        "fitness": result.best_fitness,
        "mean_latency_s": result.best_mean_latency,
        "generations_run": result.generations_run,
    }))
    _write_history(out / "history.csv", result.history)
    _write_json(out / "manifest.json", _manifest(
        args, "plan", config,
        {"cluster": args.cluster, "model": args.model,
         "workload": args.workload, "slo": args.slo}, duration))
    for pipe in result.best.pipelines:
        print(f"pipeline {plan_notation(pipe)} layers "
              f"{[s.num_layers for s in pipe]}")
    print(f"fitness {result.best_fitness:.4f} after {result.generations_run} "
          f"generations ({duration:.1f}s)")
    return 0


def cmd_replan(args) -> int:
    cluster = load_cluster(args.cluster)
    model = load_model(args.model)
    workload = load_workload(args.workload)
    slo = load_slo(args.slo)
    previous = load_plan(args.plan)
    departed = set(_parse_ints(args.remove, "remove"))
    config = _search_config(args)
    out = _out_dir(args)
    reduced, _ = remove_devices(cluster, departed)
    t0 = time.perf_counter()
    result = warm_replan(previous, departed, reduced, model, workload, slo,
                         config, threads=args.threads)
    duration = time.perf_counter() - t0
    _write_json(out / "plan.json", plan_to_dict(result.best, {
        "fitness": result.best_fitness,
        "mean_latency_s": result.best_mean_latency,
        "generations_run": result.generations_run,
        "removed_devices": sorted(departed),
    }))
    _write_json(out / "reduced_cluster.json", cluster_to_dict(reduced))
    _write_history(out / "history.csv", result.history)
    _write_json(out / "manifest.json", _manifest(
        args, "replan", config,
        {"cluster": args.cluster, "model": args.model, "workload": args.workload,
         "slo": args.slo, "plan": args.plan}, duration))
    print(f"replanned without devices {sorted(departed)}: fitness "
          f"{result.best_fitness:.4f} in {result.generations_run} generations "
          f"({duration:.1f}s)")
    return 0


def cmd_simulate(args) -> int:
    cluster = load_cluster(args.cluster)
    model = load_model(args.model)
    workload = load_workload(args.workload)
    slo = load_slo(args.slo)
    assignment = load_plan(args.plan)
    out = _out_dir(args)
    t0 = time.perf_counter()
    requests = generate_workload(workload)
    try:
        report = simulate(assignment, requests, slo, model, cluster)
        scales = sweep_slo_scale(assignment, requests,
                                 _parse_floats(args.scales, "scales"),
                                 slo, model, cluster)
        rates, peak = sweep_rate(assignment, slo,
                                 _parse_floats(args.rates, "rates"),
                                 model, cluster, workload)
    except ValueError as exc:
        raise InputError(f"plan is inconsistent with the inputs: {exc}") from exc
    duration = time.perf_counter() - t0
    _write_json(out / "report.json", {
        "schema_version": 1,
        "attainment": report.attainment,
        "mean_latency_s": report.mean_latency,
        "num_requests": len(requests),
        "peak_rate_estimate": peak,
    })
    _write_csv(out / "requests.csv",
               ["index", "arrival_s", "start_s", "finish_s", "replica", "met"],
               [(o.index, f"{o.arrival:.6f}", f"{o.start:.6f}", f"{o.finish:.6f}",
                 o.replica, int(o.met)) for o in report.per_request])
    _write_csv(out / "attainment_vs_scale.csv", ["slo_scale", "attainment"],
               [(s, f"{a:.6f}") for s, a in scales])
    _write_csv(out / "attainment_vs_rate.csv", ["rate_rps", "attainment"],
               [(r, f"{a:.6f}") for r, a in rates])
    _write_json(out / "manifest.json", _manifest(
        args, "simulate", None,
        {"cluster": args.cluster, "model": args.model, "workload": args.workload,
         "slo": args.slo, "plan": args.plan}, duration))
    print(f"attainment {report.attainment:.4f} over {len(requests)} requests; "
          f"peak feasible rate {peak}")
    return 0


def cmd_dp(args) -> int:
    cluster = load_cluster(args.cluster)
    model = load_model(args.model)
    task = load_task(args.task)
    group = _parse_ints(args.group, "group")
    partition = _parse_ints(args.partition, "partition")
    if len(group) != len(cluster.buckets):
        raise InputError(f"group has {len(group)} buckets, cluster has "
                         f"{len(cluster.buckets)}")
    try:
        result = solve_pipeline(group, partition, model, task, cluster,
                                _parse_ints(args.tp_candidates, "tp-candidates"))
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if not result.feasible:
        print(f"infeasible: no memory-feasible stage layout "
              f"(visited {result.visited_states} states)")
        return 3
    doc = {
        "cost_s": result.cost,
        "visited_states": result.visited_states,
        "notation": plan_notation(result.stages),
        "stages": [
            {"devices": list(s.devices), "tp_degree": s.tp_degree,
             "layers": s.num_layers}
            for s in result.stages
        ],
    }
    print(json.dumps(doc, indent=2))
    if args.out_dir:
        out = _out_dir(args)
        _write_json(out / "dp.json", doc)
        _write_json(out / "manifest.json", _manifest(
            args, "dp", None,
            {"cluster": args.cluster, "model": args.model, "task": args.task},
            0.0))
    return 0


def cmd_costs(args) -> int:
    cluster = load_cluster(args.cluster)
    model = load_model(args.model)
    task = load_task(args.task)
    assignment = load_plan(args.plan)
    rows = []
    for p, pipe in enumerate(assignment.pipelines):
        try:
            parts = stage_breakdowns(pipe, model, task, cluster)
        except ValueError as exc:
            raise InputError(f"pipeline {p}: {exc}") from exc
        verdict = check_memory(pipe, model, task, cluster)
        for j, (stage, br) in enumerate(zip(pipe, parts)):
            ok = all(d not in verdict.violations for d in stage.devices)
            rows.append((p, j, f"{br.comp:.6e}", f"{br.comm_tp:.6e}",
                         f"{br.comm_pp_to_next:.6e}", f"{br.mem_per_device:.0f}",
                         int(ok)))
    writer = csv.writer(sys.stdout)
    header = ["pipeline", "stage", "comp_s", "tp_s", "pp_s",
              "mem_bytes_per_dev", "feasible"]
    writer.writerow(header)
    writer.writerows(rows)
    if args.out_dir:
        _write_csv(_out_dir(args) / "costs.csv", header, rows)
    return 0


def cmd_ablate(args) -> int:
    cluster = load_cluster(args.cluster)
    model = load_model(args.model)
    workload = load_workload(args.workload)
    slo = load_slo(args.slo)
    out = _out_dir(args)
    seeds = _parse_ints(args.seeds, "seeds") if args.seeds else (args.seed,)
    base = _search_config(args)
    t0 = time.perf_counter()
    summary = []
    for seed in seeds:
        config = dataclasses.replace(base, seed=seed)
        structured = evolve(cluster, model, workload, slo, config,
                            threads=args.threads)
        random_run = random_mutation_baseline(cluster, model, workload, slo,
                                              config, threads=args.threads)
        _write_history(out / f"history_structured_{seed}.csv", structured.history)
        _write_history(out / f"history_random_{seed}.csv", random_run.history)
        summary.append((
            seed,
            f"{structured.best_fitness:.6f}",
            f"{random_run.best_fitness:.6f}",
            f"{structured.best_fitness - random_run.best_fitness:.6f}",
            _plateau_generation(structured.history),
            _plateau_generation(random_run.history),
        ))
        log.info("seed %d: structured %.4f vs random %.4f", seed,
                 structured.best_fitness, random_run.best_fitness)
    duration = time.perf_counter() - t0
    _write_csv(out / "summary.csv",
               ["seed", "structured_final", "random_final", "delta",
                "structured_plateau_gen", "random_plateau_gen"], summary)
    _write_json(out / "manifest.json", _manifest(
        args, "ablate", base,
        {"cluster": args.cluster, "model": args.model,
         "workload": args.workload, "slo": args.slo}, duration))
    wins = sum(1 for row in summary if float(row[3]) >= 0)
    print(f"structured >= random on {wins}/{len(seeds)} seeds")
    return 0


def _plateau_generation(history) -> int:
    """Generation of the last best-fitness improvement."""
    last = 0
    for prev, cur in zip(history, history[1:]):
        if cur.best_fitness > prev.best_fitness:
            last = cur.generation
    return last


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heteroplan",
        description="Placement planning and SLO simulation for LLM serving "
                    "on heterogeneous GPU pools.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, workload=True):
        p.add_argument("--cluster", required=True, help="cluster JSON file")
        p.add_argument("--model", required=True, help="model JSON file")
        if workload:
            p.add_argument("--workload", required=True, help="workload JSON file")
            p.add_argument("--slo", required=True, help="SLO JSON file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--tp-candidates", default="1,2,4,8",
                       help="comma list of allowed stage sizes")

    def add_search(p):
        p.add_argument("--pop", type=int, default=32, help="population size")
        p.add_argument("--gens", type=int, default=100, help="generation budget")
        p.add_argument("--out-dir", required=True)

    p = sub.add_parser("plan", help="search for a serving plan")
    add_common(p)
    add_search(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("replan", help="warm-start after device departures")
    add_common(p)
    add_search(p)
    p.add_argument("--plan", required=True, help="previous plan JSON")
    p.add_argument("--remove", required=True, help="comma list of departed ids")
    p.set_defaults(func=cmd_replan)

    p = sub.add_parser("simulate", help="simulate a plan against a workload")
    add_common(p)
    p.add_argument("--plan", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--scales", default="0.125,0.25,0.5,1,2,4,8")
    p.add_argument("--rates", default="0.125,0.25,0.5,1,2,5,10")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dp", help="solve one pipeline's stage layout")
    add_common(p, workload=False)
    p.add_argument("--task", required=True, help="task JSON file")
    p.add_argument("--group", required=True, help="comma counts per bucket")
    p.add_argument("--partition", required=True, help="comma layers per stage")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_dp)

    p = sub.add_parser("costs", help="per-stage cost breakdown of a plan")
    add_common(p, workload=False)
    p.add_argument("--task", required=True, help="task JSON file")
    p.add_argument("--plan", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_costs)

    p = sub.add_parser("ablate", help="structured vs random mutation convergence")
    add_common(p)
    add_search(p)
    p.add_argument("--seeds", help="comma list; overrides --seed")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        log.error("%s", exc)
        return 2
    except FileNotFoundError as exc:
        log.error("missing input file: %s", exc)
        return 2
    except (InfeasiblePoolError, InfeasibleError) as exc:
        log.error("infeasible: %s", exc)
        return 3
    except InternalError as exc:
        log.error("internal invariant violated: %s", exc)
        return 4
    except Exception:  # noqa: BLE001 - last-resort taxonomy mapping
        log.exception("unexpected failure")
        return 4


if __name__ == "__main__":
    sys.exit(main())
