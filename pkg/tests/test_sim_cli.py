"""Scenario outcomes, report serialization and the command line."""

import csv
import json
import statistics
from functools import lru_cache
from pathlib import Path

import pytest

from spacenet import cli
from spacenet.config import SCHEMA_VERSION, load_config, parse_config
from spacenet.sim import bench_pod, bench_pof, emit_report, load_report, run_scenario
from spacenet.sim.bench import append_benchmarks
from spacenet.sim.report import CSV_COLUMNS, ReportIOError

SCENARIOS = Path(__file__).parent.parent / "scenarios"


@lru_cache(maxsize=None)
def run(name):
    return run_scenario(load_config(SCENARIOS / f"{name}.yaml"))


def total(report, party):
    s = report["scores"][party]
    return s["pod"] + s["pof"]


def anomalous(report, label):
    cells = report["detection"]["confusion"].get(label, {})
    return sum(n for c, n in cells.items() if c.startswith("Anomalous"))


# --- one scenario per outcome cell ---------------------------------------------------


class TestOutcomes:
    def test_success(self):
        res = run("honest")
        r = res.report
        cfg = load_config(SCENARIOS / "honest.yaml")
        assert res.ok
        assert anomalous(r, "Honest") == 0
        assert r["outcomes"] == [] and all(row["skips"] == 0 for row in r["epochs"])
        assert r["chain"]["height"] == cfg.epochs * cfg.epoch_config.n_epoch_blocks
        assert r["transmitters"]["S0"]["corroborated_epochs"] == cfg.epochs
        assert r["transmitters"]["S0"]["pof"] > 0

    def test_rfraud(self):
        r = run("rfraud").report
        assert r["detection"]["recall"] >= 0.9
        assert r["detection"]["false_positive_rate"] <= 0.05
        fraud = [p for p, k in r["roles"].items() if k == "RFraud"]
        assert fraud and all(r["scores"][p]["pod"] < 0 for p in fraud)
        # the honest transmitter keeps its reward despite the lying receivers
        assert r["transmitters"]["S0"]["pod"] > 0

    def test_tfraud(self):
        r = run("tfraud").report
        s0 = r["transmitters"]["S0"]
        assert s0["corroborated_epochs"] == 0
        assert s0["pod"] < 0 and s0["pof"] == 0
        assert sum(row["pof"]["accepted"] for row in r["epochs"]) == 0

    def test_objective(self):
        r = run("objective").report
        wet = r["detection"]["confusion"]["Objective"]
        assert wet == {"Anomalous/Objective": sum(wet.values())}
        assert r["detection"]["objective_flagged"] == 1.0
        assert r["transmitters"]["S0"]["pod"] > 0
        assert all(o["slashed"] == 0 for o in r["outcomes"])
        for p, k in r["roles"].items():
            if k == "ObjectiveFailure":
                assert r["scores"][p]["pod"] >= 0

    def test_no_service(self):
        # claims nothing, delivers nothing: no fraud, no flow income
        r = run("no_service").report
        assert anomalous(r, "Honest") == 0
        assert r["transmitters"]["S0"]["pod"] > 0
        # every window is attested as fully failed, which is consistent but earns nothing
        assert all(v["pof"] == 0 for v in r["scores"].values())

    def test_corporate(self):
        r = run("corporate").report
        assert r["config"]["epochs"] == 50
        colluders = [p for p, k in r["roles"].items() if k == "CorporateFraud"]
        assert colluders
        assert anomalous(r, "Corporate") == sum(r["detection"]["confusion"]["Corporate"].values())
        honest_rx = [p for p in r["scores"] if p.startswith("R") and r["roles"].get(p) is None]
        s1_rx = [p for p in honest_rx if p in _receivers_of(r, "S1")]
        assert s1_rx
        colluding = [total(r, "S0") + total(r, p) for p in colluders]
        honest = [total(r, "S1") + total(r, p) for p in s1_rx]
        assert max(colluding) < statistics.median(honest)

    def test_crash_faults(self):
        res = run("crash_faults")
        r = res.report
        assert res.ok
        assert all(v["ok"] for v in r["invariants"].values())
        skips = [o for o in r["outcomes"] if o["skipped"]]
        assert skips and all(o["slashed"] > 0 for o in skips)
        assert {o["leader"] for o in skips if o["reason"] == "BadWeight"} == {"V03"}
        assert r["chain"]["height"] >= r["config"]["epochs"]
        heights = [row["height"] for row in r["epochs"]]
        assert all(b > a for a, b in zip(heights, heights[1:]))

    def test_confusion_rows_sum_to_population(self):
        r = run("rfraud").report
        n = r["config"]["n_receivers"]
        for row in r["epochs"]:
            assert sum(sum(c.values()) for c in row["confusion"].values()) == n


def _receivers_of(report, sat):
    # which transmitter serves whom is read back from the run's DA log
    res = run(report["scenario"])
    return {s["receiver"] for rec in res.da.fetch("alpha", transmitter=sat, epoch=0) for s in rec["samples"]}


# --- reports --------------------------------------------------------------------


class TestReport:
    def test_json_round_trip(self, tmp_path):
        r = run("honest").report
        p = emit_report(r, "json", tmp_path / "r.json")
        assert load_report(p) == json.loads(json.dumps(r))
        assert load_report(p)["v"] == SCHEMA_VERSION

    def test_csv_matches_json(self, tmp_path):
        r = json.loads(json.dumps(run("honest").report))
        append_benchmarks(r, pod=[20], pof=[(20, 64)])
        p = emit_report(r, "csv", tmp_path / "r.csv")
        rows = list(csv.DictReader(p.open()))
        assert tuple(rows[0]) == CSV_COLUMNS
        assert rows[0]["table"] == "schema" and int(rows[0]["value"]) == SCHEMA_VERSION
        pod = [x for x in rows if x["table"] == "benchmark_pod"]
        pof = [x for x in rows if x["table"] == "benchmark_pof"]
        assert float(pod[0]["value"]) == r["benchmarks"]["pod"][0]["seconds"]
        assert pof[0]["row"] == "N=20,L=64" and float(pof[0]["value"]) == r["benchmarks"]["pof"][0]["seconds"]
        heights = {int(x["epoch"]): int(x["value"]) for x in rows if x["table"] == "epochs" and x["column"] == "height"}
        assert heights == {row["epoch"]: row["height"] for row in r["epochs"]}

    def test_unwritable(self, tmp_path):
        with pytest.raises(ReportIOError):
            emit_report({"v": 1}, "json", tmp_path / "missing" / "r.json")

    def test_bad_format(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report({}, "xml", tmp_path / "r.xml")

    def test_deterministic(self):
        cfg = load_config(SCENARIOS / "honest.yaml")
        a, b = run_scenario(cfg), run_scenario(cfg)
        assert a.da.dumps() == b.da.dumps()
        assert json.dumps(a.report, sort_keys=True) == json.dumps(b.report, sort_keys=True)

    def test_seed_matters(self):
        a = run_scenario(parse_config({"seed": 1, "n_receivers": 20, "epochs": 2}))
        b = run_scenario(parse_config({"seed": 2, "n_receivers": 20, "epochs": 2}))
        assert a.da.digest() != b.da.digest()


class TestBench:
    def test_positive(self):
        assert bench_pod(30, repeats=1) > 0
        assert bench_pof(30, 64, repeats=1) > 0

    def test_too_small(self):
        with pytest.raises(ValueError):
            bench_pod(1)


# --- command line ------------------------------------------------------------------


class TestCli:
    def test_simulate(self, tmp_path, capsys):
        out, da = tmp_path / "r.json", tmp_path / "da.jsonl"
        code = cli.main(["simulate", "--config", str(SCENARIOS / "honest.yaml"), "--epochs", "2", "--out", str(out), "--da-log", str(da)])
        assert code == cli.EXIT_OK
        rep = load_report(out)
        assert rep["config"]["epochs"] == 2 and rep["da"]["records"] == len(da.read_text().splitlines())

    def test_simulate_csv(self, tmp_path):
        out = tmp_path / "r.csv"
        assert cli.main(["simulate", "--config", str(SCENARIOS / "honest.yaml"), "--epochs", "1", "--out", str(out), "--format", "csv"]) == 0
        assert out.read_text().startswith(",".join(CSV_COLUMNS))

    def test_config_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("n_receivers: 0\n")
        assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path / "r.json")]) == cli.EXIT_CONFIG
        assert "n_receivers" in capsys.readouterr().err
        assert cli.main(["validate-config", str(bad)]) == cli.EXIT_CONFIG

    def test_io_error(self, tmp_path):
        out = tmp_path / "nope" / "r.json"
        assert cli.main(["simulate", "--config", str(SCENARIOS / "honest.yaml"), "--epochs", "1", "--out", str(out)]) == cli.EXIT_IO

    def test_invariant_exit(self, tmp_path, capsys):
        # nobody has any election weight, so the leader queue cannot be filled
        cfg = tmp_path / "dead.yaml"
        cfg.write_text("n_receivers: 10\nepochs: 1\nconsensus:\n  stake: 0\n")
        assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "r.json")]) == cli.EXIT_INVARIANT
        assert "election" in capsys.readouterr().err

    @pytest.mark.parametrize("path", sorted(SCENARIOS.glob("*.yaml")), ids=lambda p: p.stem)
    def test_validate_shipped(self, path, capsys):
        assert cli.main(["validate-config", str(path)]) == cli.EXIT_OK
        assert "ok" in capsys.readouterr().out

    def test_bench(self, capsys):
        assert cli.main(["bench", "pod", "--receivers", "20", "--repeats", "1"]) == 0
        row = json.loads(capsys.readouterr().out)
        assert row["bench"] == "pod" and row["seconds"] > 0
        assert cli.main(["bench", "pof", "--receivers", "20", "--packet-len", "32", "--repeats", "1"]) == 0
        assert json.loads(capsys.readouterr().out)["l"] == 32
        assert cli.main(["bench", "pod", "--receivers", "1"]) == cli.EXIT_CONFIG
