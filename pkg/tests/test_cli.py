"""End-to-end CLI runs against temp input files (in-process via main())."""

from __future__ import annotations

import csv
import json

import pytest

from heteroplan.cli import build_parser, load_plan, main, plan_from_dict
from heteroplan.cluster import InputError, load_cluster, load_model
from heteroplan.genetic import SearchConfig, evolve, random_mutation_baseline
from heteroplan.simulate import load_slo, load_workload

from conftest import write_json


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture
def task_file(tmp_path):
    return write_json(tmp_path / "task.json", {
        "schema_version": 1, "batch_size": 1, "input_len": 32, "output_len": 16,
    })


def plan_args(inp, out, extra=()):
    return ["plan", "--cluster", inp["cluster"], "--model", inp["model"],
            "--workload", inp["workload"], "--slo", inp["slo"],
            "--out-dir", str(out), "--pop", "8", "--gens", "5",
            "--seed", "0", *extra]


class TestPlan:
    def test_writes_bundle_and_layer_sums(self, input_files, tmp_path):
        out = tmp_path / "out"
        assert main(plan_args(input_files, out)) == 0
        doc = json.loads((out / "plan.json").read_text())
        assert doc["schema_version"] == 1 and doc["pipelines"]
        for pipe in doc["pipelines"]:
            assert sum(st["layers"] for st in pipe["stages"]) == 8
            assert pipe["notation"].startswith("[")
        assert 0.0 <= doc["fitness"] <= 1.0
        hist = read_csv(out / "history.csv")
        assert hist[0] == ["generation", "best_fitness", "mean_fitness"]
        assert len(hist) >= 2
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "plan"
        assert set(manifest["inputs"]) == {"cluster", "model", "workload", "slo"}
        for entry in manifest["inputs"].values():
            assert len(entry["sha256"]) == 64

    def test_zero_generations_emits_seed_plan(self, input_files, tmp_path):
        out = tmp_path / "out0"
        assert main(plan_args(input_files, out, ["--gens", "0"])) == 0
        doc = json.loads((out / "plan.json").read_text())
        assert doc["generations_run"] == 0
        assert doc["pipelines"]

    def test_reruns_are_identical_apart_from_duration(self, input_files, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(plan_args(input_files, a)) == 0
        assert main(plan_args(input_files, b)) == 0
        assert (a / "plan.json").read_bytes() == (b / "plan.json").read_bytes()
        assert (a / "history.csv").read_bytes() == (b / "history.csv").read_bytes()
        ma = json.loads((a / "manifest.json").read_text())
        mb = json.loads((b / "manifest.json").read_text())
        ma.pop("duration_s"), mb.pop("duration_s")
        ma["resolved_args"].pop("out_dir"), mb["resolved_args"].pop("out_dir")
        for m in (ma, mb):
            for entry in m["inputs"].values():
                entry.pop("path")
        assert ma == mb

    def test_missing_model_file_is_input_error(self, input_files, tmp_path):
        args = plan_args(input_files, tmp_path / "x")
        args[args.index("--model") + 1] = str(tmp_path / "nope.json")
        assert main(args) == 2

    def test_malformed_json_is_input_error(self, input_files, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        args = plan_args(input_files, tmp_path / "x")
        args[args.index("--cluster") + 1] = str(bad)
        assert main(args) == 2

    def test_pool_too_small_for_model_is_infeasible(self, input_files, tmp_path):
        # one 140 MB card cannot hold the 8-layer toy model
        doc = json.loads(open(input_files["cluster"]).read())
        doc["devices"] = doc["devices"][:1]
        doc["alpha_s"] = [row[:1] for row in doc["alpha_s"][:1]]
        doc["beta_Bps"] = [row[:1] for row in doc["beta_Bps"][:1]]
        tiny = write_json(tmp_path / "tiny.json", doc)
        args = plan_args(input_files, tmp_path / "x")
        args[args.index("--cluster") + 1] = tiny
        assert main(args) == 3


class TestDp:
    def base(self, inp, task_file, group, partition):
        return ["dp", "--cluster", inp["cluster"], "--model", inp["model"],
                "--task", task_file, "--group", group, "--partition", partition]

    def test_prints_solution_json(self, input_files, task_file, capsys, tmp_path):
        args = self.base(input_files, task_file, "2,0", "4,4")
        args += ["--out-dir", str(tmp_path / "dp")]
        assert main(args) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["cost_s"] > 0 and len(doc["stages"]) == 2
        assert [s["layers"] for s in doc["stages"]] == [4, 4]
        on_disk = json.loads((tmp_path / "dp" / "dp.json").read_text())
        assert on_disk == doc

    def test_memory_infeasible_exits_3(self, input_files, task_file, capsys):
        assert main(self.base(input_files, task_file, "1,0", "8")) == 3
        assert "infeasible" in capsys.readouterr().out

    def test_group_arity_mismatch_exits_2(self, input_files, task_file):
        assert main(self.base(input_files, task_file, "2", "4,4")) == 2

    def test_unparseable_group_exits_2(self, input_files, task_file):
        assert main(self.base(input_files, task_file, "2,x", "4,4")) == 2


class TestCosts:
    def test_breakdown_csv(self, input_files, task_file, tmp_path, capsys):
        plan = write_json(tmp_path / "plan.json", {
            "schema_version": 1,
            "pipelines": [
                {"stages": [{"devices": [0, 1], "layers": 4},
                            {"devices": [2, 3], "layers": 4}]},
                {"stages": [{"devices": [4, 5, 6, 7], "layers": 8}]},
            ],
        })
        out = tmp_path / "costs"
        assert main(["costs", "--cluster", input_files["cluster"],
                     "--model", input_files["model"], "--task", task_file,
                     "--plan", plan, "--out-dir", str(out)]) == 0
        rows = read_csv(out / "costs.csv")
        assert rows[0] == ["pipeline", "stage", "comp_s", "tp_s", "pp_s",
                           "mem_bytes_per_dev", "feasible"]
        assert len(rows) == 4                     # 2 stages + 1 stage
        assert [r[0] for r in rows[1:]] == ["0", "0", "1"]
        assert all(r[6] == "1" for r in rows[1:])
        stdout_rows = [ln.split(",") for ln in
                       capsys.readouterr().out.strip().splitlines()]
        assert stdout_rows == rows

    def test_partial_plan_still_reports(self, input_files, task_file, tmp_path,
                                        capsys):
        # the breakdown is a reporting path: incomplete layer coverage is
        # allowed so half-built plans can be inspected
        plan = write_json(tmp_path / "plan.json", {
            "schema_version": 1,
            "pipelines": [{"stages": [{"devices": [0, 1], "layers": 5}]}],
        })
        assert main(["costs", "--cluster", input_files["cluster"],
                     "--model", input_files["model"], "--task", task_file,
                     "--plan", plan]) == 0
        assert len(capsys.readouterr().out.strip().splitlines()) == 2

    def test_malformed_plan_exits_2(self, input_files, task_file, tmp_path):
        plan = write_json(tmp_path / "plan.json", {
            "schema_version": 1,
            "pipelines": [{"stages": [{"devices": "xyz", "layers": 4}]}],
        })
        assert main(["costs", "--cluster", input_files["cluster"],
                     "--model", input_files["model"], "--task", task_file,
                     "--plan", plan]) == 2


class TestSimulate:
    @pytest.fixture
    def static_plan(self, tmp_path):
        return write_json(tmp_path / "static_plan.json", {
            "schema_version": 1,
            "pipelines": [
                {"stages": [{"devices": [0, 1], "layers": 4},
                            {"devices": [2, 3], "layers": 4}]},
                {"stages": [{"devices": [4, 5], "layers": 4},
                            {"devices": [6, 7], "layers": 4}]},
            ],
        })

    def test_report_bundle(self, input_files, static_plan, tmp_path):
        out = tmp_path / "sim"
        assert main(["simulate", "--cluster", input_files["cluster"],
                     "--model", input_files["model"],
                     "--workload", input_files["workload"],
                     "--slo", input_files["slo"], "--plan", static_plan,
                     "--out-dir", str(out),
                     "--scales", "0.5,1,2", "--rates", "1,10"]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["num_requests"] == 300
        assert 0.0 <= report["attainment"] <= 1.0
        assert len(read_csv(out / "requests.csv")) == 301
        scale_rows = read_csv(out / "attainment_vs_scale.csv")
        assert scale_rows[0] == ["slo_scale", "attainment"]
        assert len(scale_rows) == 4
        vals = [float(r[1]) for r in scale_rows[1:]]
        assert vals == sorted(vals)
        assert len(read_csv(out / "attainment_vs_rate.csv")) == 3
        assert json.loads((out / "manifest.json").read_text())["command"] == "simulate"

    def test_plan_inconsistent_with_model_exits_2(self, input_files, tmp_path):
        bad = write_json(tmp_path / "bad_plan.json", {
            "schema_version": 1,
            "pipelines": [{"stages": [{"devices": [0, 1], "layers": 3}]}],
        })
        assert main(["simulate", "--cluster", input_files["cluster"],
                     "--model", input_files["model"],
                     "--workload", input_files["workload"],
                     "--slo", input_files["slo"], "--plan", bad,
                     "--out-dir", str(tmp_path / "x")]) == 2


class TestReplan:
    def test_after_departures(self, input_files, tmp_path):
        first = tmp_path / "first"
        assert main(plan_args(input_files, first, ["--gens", "8"])) == 0
        out = tmp_path / "second"
        assert main(["replan", "--cluster", input_files["cluster"],
                     "--model", input_files["model"],
                     "--workload", input_files["workload"],
                     "--slo", input_files["slo"],
                     "--plan", str(first / "plan.json"), "--remove", "4,5",
                     "--out-dir", str(out), "--pop", "8", "--gens", "8",
                     "--seed", "0"]) == 0
        doc = json.loads((out / "plan.json").read_text())
        assert doc["removed_devices"] == [4, 5]
        devices = [d for pipe in doc["pipelines"]
                   for st in pipe["stages"] for d in st["devices"]]
        assert devices and all(0 <= d < 6 for d in devices)   # remapped ids
        reduced = json.loads((out / "reduced_cluster.json").read_text())
        assert len(reduced["devices"]) == 6
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["inputs"]["plan"]["sha256"]

    def test_remove_everything_exits_2(self, input_files, tmp_path):
        first = tmp_path / "first"
        assert main(plan_args(input_files, first)) == 0
        code = main(["replan", "--cluster", input_files["cluster"],
                     "--model", input_files["model"],
                     "--workload", input_files["workload"],
                     "--slo", input_files["slo"],
                     "--plan", str(first / "plan.json"),
                     "--remove", "0,1,2,3,4,5,6,7",
                     "--out-dir", str(tmp_path / "x"), "--pop", "8",
                     "--gens", "4", "--seed", "0"])
        assert code == 2


class TestAblate:
    def test_summary_row_per_seed(self, input_files, tmp_path):
        out = tmp_path / "ab"
        assert main(["ablate", "--cluster", input_files["cluster"],
                     "--model", input_files["model"],
                     "--workload", input_files["workload"],
                     "--slo", input_files["slo"], "--out-dir", str(out),
                     "--pop", "6", "--gens", "3", "--seeds", "0,1"]) == 0
        rows = read_csv(out / "summary.csv")
        assert rows[0][:3] == ["seed", "structured_final", "random_final"]
        assert [r[0] for r in rows[1:]] == ["0", "1"]
        for seed in (0, 1):
            assert (out / f"history_structured_{seed}.csv").exists()
            assert (out / f"history_random_{seed}.csv").exists()

    def test_zero_rates_make_arms_identical(self, input_files):
        # with every mutation disabled both arms degenerate to the same
        # selection-only loop
        cluster = load_cluster(input_files["cluster"])
        model = load_model(input_files["model"])
        workload = load_workload(input_files["workload"])
        slo = load_slo(input_files["slo"])
        config = SearchConfig(population_size=8, generations=6, seed=3,
                              mutation_rates=(0.0, 0.0, 0.0))
        a = evolve(cluster, model, workload, slo, config)
        b = random_mutation_baseline(cluster, model, workload, slo, config)
        assert a.history == b.history
        assert a.best == b.best


class TestPlanDocuments:
    def test_round_trip(self, input_files, tmp_path):
        out = tmp_path / "out"
        assert main(plan_args(input_files, out)) == 0
        assignment = load_plan(out / "plan.json")
        doc = json.loads((out / "plan.json").read_text())
        assert len(assignment.pipelines) == len(doc["pipelines"])

    def test_bad_document_raises_input_error(self):
        with pytest.raises(InputError):
            plan_from_dict({"pipelines": [{"stages": [{"devices": "xyz"}]}]})

    def test_parser_requires_subcommand(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])
