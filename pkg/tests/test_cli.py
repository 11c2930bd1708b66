import csv
import json
from pathlib import Path

import pytest

from olapsim import cli, runner
from olapsim.config import parse
from olapsim.plan import InvariantViolation
from olapsim.runner import run_scenario, sweep

SHORT = "[run]\nend_time = 150\nwarmup = 70\n"


@pytest.fixture
def scn(tmp_path):
    def write(text, name="case"):
        p = tmp_path / f"{name}.scn"
        p.write_text(text)
        return str(p)

    return write


def manifest(path):
    return json.loads((Path(path) / "manifest.json").read_text())


class TestRun:
    def test_writes_artifacts(self, scn, tmp_path, monkeypatch):
        monkeypatch.setenv("OLAPSIM_OUTPUT_ROOT", str(tmp_path / "root"))
        assert cli.main(["run", scn(SHORT, "short")]) == 0
        out = tmp_path / "root" / "short"
        m = manifest(out)
        assert m["scenario"] == "short" and m["seed"] == 1
        for name in m["files"]:
            assert (out / name).exists()
        assert {"queries_per_second.svg", "processing_time.svg", "config.resolved.json"} <= set(m["files"])
        for key in ("config_hash", "tool_version", "event_counts", "wall_clock_s", "final_time", "summary"):
            assert key in m

    def test_max_events_override(self, scn, tmp_path):
        out = tmp_path / "o"
        assert cli.main(["run", scn(SHORT), "--max-events", "1000", "--out", str(out), "--no-svg"]) == 0
        m = manifest(out)
        assert m["total_events"] == 1000 and m["stopped_by"] == "max_events"
        assert sum(m["event_counts"].values()) == 1000

    def test_seed_and_policy_override(self, scn, tmp_path):
        out = tmp_path / "o"
        args = ["run", scn(SHORT), "--seed", "5", "--policy", "round_robin", "--out", str(out), "--no-svg"]
        assert cli.main(args) == 0
        resolved = json.loads((out / "config.resolved.json").read_text())
        assert resolved["run"]["seed"] == 5 and resolved["routing"]["policy"] == "round_robin"

    def test_repeat_run_identical_manifest(self, tmp_path):
        cfg = parse(SHORT)
        a = run_scenario(cfg, out_dir=tmp_path / "a", svg=False).manifest
        b = run_scenario(cfg, out_dir=tmp_path / "b", svg=False).manifest
        a.pop("wall_clock_s"), b.pop("wall_clock_s")
        assert a == b

    def test_default_scenario_name(self, tmp_path, monkeypatch):
        monkeypatch.setenv("OLAPSIM_OUTPUT_ROOT", str(tmp_path))
        assert cli.main(["run", "--max-events", "500", "--no-svg"]) == 0
        assert (tmp_path / "reference" / "manifest.json").exists()

    def test_oracle_flag(self, scn, tmp_path, capsys):
        assert cli.main(["run", scn(SHORT), "--out", str(tmp_path / "o"), "--no-svg", "--oracle"]) == 0
        out = capsys.readouterr().out
        assert "[PASS] D/D/1" in out and "[PASS] M/D/1" in out


class TestExitCodes:
    def test_parse_error(self, scn, capsys):
        assert cli.main(["run", scn("[run\n")]) == 2
        assert "line 1" in capsys.readouterr().err

    def test_validation_error(self, scn, capsys):
        assert cli.main(["run", scn("[servers]\nspeed_factors = [1,1,1]\n")]) == 3
        assert "speed_factors" in capsys.readouterr().err

    def test_runtime_invariant(self, scn, monkeypatch):
        def boom(*a, **k):
            raise InvariantViolation("FIFO order broken")

        monkeypatch.setattr(cli, "run_scenario", boom)
        assert cli.main(["run", scn(SHORT)]) == 4

    def test_missing_file(self, tmp_path):
        assert cli.main(["run", str(tmp_path / "absent.scn")]) == 1


class TestSweep:
    AXES = [("routing.policy", ["flow_weighted", "response_time_weighted"]), ("run.seed", ["1", "2"])]

    def test_comparison_table(self, scn, tmp_path, capsys):
        out = tmp_path / "sw"
        code = cli.main(["sweep", scn(SHORT, "base"), "--axis", "routing.policy=flow_weighted;round_robin",
                         "--jobs", "2", "--out", str(out), "--no-svg"])
        assert code == 0
        rows = list(csv.DictReader((out / "comparison.csv").open()))
        assert [r["scenario_id"] for r in rows] == ["base__policy=flow_weighted", "base__policy=round_robin"]
        assert all(r["status"] == "ok" and float(r["cv"]) < 0.1 for r in rows)
        assert (out / rows[0]["scenario_id"] / "manifest.json").exists()

    def test_failed_run_recorded(self, tmp_path):
        rows, table = sweep(SHORT, [("servers.base_service_time", ["0.02", "-1"])], tmp_path)
        assert rows[0]["status"] == "ok" and rows[1]["status"].startswith("error")
        assert "error" in table.read_text()

    def test_failed_run_exit_code(self, scn, tmp_path, monkeypatch):
        monkeypatch.setattr(runner, "run_scenario", lambda *a, **k: (_ for _ in ()).throw(RuntimeError("x")))
        code = cli.main(["sweep", scn(SHORT), "--axis", "run.seed=1;2", "--out", str(tmp_path), "--no-svg"])
        assert code == 1

    def test_bad_axis_rejected_up_front(self, scn, tmp_path):
        assert cli.main(["sweep", scn(SHORT), "--axis", "run.nothing=1", "--out", str(tmp_path)]) == 3

    def test_runs_independent_of_order(self, tmp_path):
        fwd, _ = sweep(SHORT, self.AXES, tmp_path / "f", parallelism=2)
        rev, _ = sweep(SHORT, [(k, v[::-1]) for k, v in self.AXES[::-1]], tmp_path / "r")
        by_id = {r["scenario_id"]: r for r in rev}
        for row in fwd:
            other = manifest(tmp_path / "r" / _reversed_id(row["scenario_id"]))
            mine = manifest(tmp_path / "f" / row["scenario_id"])
            for m in (mine, other):
                m.pop("wall_clock_s"), m.pop("scenario")
            assert mine == other
        assert len(by_id) == 4

    def test_heterogeneous_claims(self, tmp_path):
        text = "[servers]\nspeed_factors = [1,1,1,1,0.5,0.5,0.5,0.5]\n[workload]\ntarget_aggregate = 160\n" \
               "[run]\nend_time = 400\n"
        rows, _ = sweep(text, [("routing.policy", ["flow_weighted", "response_time_weighted"])], tmp_path)
        fw, rtw = rows
        assert 1.8 < fw["utilization_max"] / fw["utilization_min"] < 2.2
        assert rtw["utilization_spread"] < fw["utilization_spread"]


def _reversed_id(run_id):
    base, *parts = run_id.split("__")
    return "__".join([base] + parts[::-1])


class TestOracleCommand:
    def test_passes(self, capsys):
        assert cli.main(["oracle"]) == 0
        assert capsys.readouterr().out.count("[PASS]") == 2

    def test_dump_config(self, capsys):
        assert cli.main(["dump-config"]) == 0
        assert json.loads(capsys.readouterr().out)["run"]["max_events"] == 50_000_000
