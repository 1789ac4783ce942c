import csv
import json
from pathlib import Path

import pytest

from iodsim import cli
from iodsim.checker import CheckReport
from iodsim.metrics import read_trace

SCENARIOS = Path(__file__).resolve().parent.parent / "docs" / "scenarios"
FIX_2Z = str(SCENARIOS / "fixture_2z.json")
FIX_3Z = str(SCENARIOS / "fixture_3z.json")


def broken_scenario(tmp_path, mutate) -> str:
    doc = json.loads(Path(FIX_2Z).read_text())
    mutate(doc)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    return str(path)


def test_validate_ok(capsys):
    assert cli.main(["validate", FIX_2Z]) == 0
    assert capsys.readouterr().out.startswith("ok: 2 zones")


def test_validate_invalid_exits_1(tmp_path, capsys):
    def dangle(doc):
        next(e for e in doc["elements"] if "/airway/" in e["id"])["to"] = "A/intersection/nowhere"
    assert cli.main(["validate", broken_scenario(tmp_path, dangle)]) == 1
    assert "validation failed" in capsys.readouterr().err


def test_missing_seed_exits_1(tmp_path, capsys):
    path = broken_scenario(tmp_path, lambda doc: doc["sim"].pop("seed"))
    assert cli.main(["run", path, "--out", str(tmp_path / "t.jsonl")]) == 1
    assert "seed required" in capsys.readouterr().err


def test_missing_file_exits_1(tmp_path):
    assert cli.main(["validate", str(tmp_path / "absent.json")]) == 1


def test_run_writes_trace_and_csvs(tmp_path, capsys):
    out, metrics = tmp_path / "trace.jsonl", tmp_path / "m.csv"
    assert cli.main(["run", FIX_2Z, "--seed", "4", "--out", str(out), "--metrics", str(metrics)]) == 0
    printed = capsys.readouterr().out
    assert printed.startswith("digest ")
    assert "trips_completed 1" in printed
    assert read_trace(out)
    with open(metrics) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["metric", "value"]
    assert ["trips_completed", "1"] in rows
    with open(tmp_path / "m.occupancy.csv") as fh:
        occ = list(csv.reader(fh))
    assert occ[0] == ["tick", "element", "count", "capacity"] and len(occ) > 1


def test_run_is_reproducible(tmp_path, capsys):
    digests = []
    for i in range(2):
        cli.main(["run", FIX_3Z, "--seed", "7", "--ticks", "150", "--out", str(tmp_path / f"{i}.jsonl")])
        digests.append(capsys.readouterr().out.splitlines()[0])
    assert digests[0] == digests[1]
    assert (tmp_path / "0.jsonl").read_bytes() == (tmp_path / "1.jsonl").read_bytes()


def test_run_flags_reach_the_engine(tmp_path):
    out = tmp_path / "t.jsonl"
    assert cli.main(["run", FIX_2Z, "--ticks", "60", "--no-admission", "--loss", "0.3", "--out", str(out)]) == 0
    events = read_trace(out)
    assert max(e["tick"] for e in events) == 59
    assert any(e["kind"] == "msg_dropped" for e in events)
    assert {e["data"]["verdict"] for e in events if e["kind"] == "admission"} <= {"Admit"}


def test_invariant_breach_exits_2(tmp_path, monkeypatch, capsys):
    def failing(events, scenario):
        rep = CheckReport()
        rep.add("capacity", "synthetic")
        return rep
    monkeypatch.setattr(cli, "check_trace", failing)
    out = tmp_path / "t.jsonl"
    assert cli.main(["run", FIX_2Z, "--ticks", "20", "--out", str(out)]) == 2
    assert "invariant breach" in capsys.readouterr().err
    assert out.exists()


def test_route_across_zones(capsys):
    assert cli.main(["route", FIX_3Z, "--from", "A/node/nA", "--to", "C/node/nC"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "route: A+B/gate/gAB1 -> B+C/gate/gBC1"
    assert [ln.split(":")[0] for ln in lines[1:]] == ["A", "B", "C"]
    assert lines[-1].endswith("C/node/nC")


def test_route_same_zone(capsys):
    assert cli.main(["route", FIX_2Z, "--from", "A/node/nA", "--to", "A+B/gate/g1"]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "route: (same zone)"


def test_route_bad_address_exits_1():
    assert cli.main(["route", FIX_2Z, "--from", "nonsense", "--to", "B/node/nB"]) == 1


def test_stats_of_written_trace(tmp_path, capsys):
    out = tmp_path / "t.jsonl"
    cli.main(["run", FIX_2Z, "--out", str(out)])
    run_out = capsys.readouterr().out.splitlines()[1:]
    assert cli.main(["stats", str(out)]) == 0
    assert capsys.readouterr().out.splitlines() == run_out


def test_stats_malformed_exits_1(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert cli.main(["stats", str(bad)]) == 1


def test_reservations_dump(capsys):
    assert cli.main(["reservations", FIX_2Z, "--at", "3", "--zsp", "zspA"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["tick"] == 3
    assert [z["zsp"] for z in doc["zsps"]] == ["zspA"]


def test_subcommand_required():
    with pytest.raises(SystemExit):
        cli.main([])
