import csv
import json

import pytest

from gpushare.cli import main, parse_cluster, parse_grid, parse_interference, theorem_rows
from gpushare.errors import ConfigError, ValidationError
from gpushare.perf_model import GIB, dump_interference, sample_interference
from gpushare.simulator import SUMMARY_COLUMNS
from gpushare.trace import load_trace, save_trace

from builders import job


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_parse_helpers(tmp_path):
    c = parse_cluster("16x4", 11)
    assert (c.num_servers, c.gpus_per_server, c.gpu_memory) == (16, 4, 11 * GIB)
    with pytest.raises(ConfigError):
        parse_cluster("16", 11)
    assert parse_interference("1.5", ["a"], 0).lookup("a", "b") == (1.5, 1.5)
    with pytest.raises(ConfigError):
        parse_interference("0.5", ["a"], 0)
    with pytest.raises(ConfigError):
        parse_interference(str(tmp_path / "nope.json"), ["a"], 0)
    table = sample_interference(seed=2)
    dump_interference(table, tmp_path / "xi.json")
    assert parse_interference(str(tmp_path / "xi.json"), [], 0) == table
    assert parse_grid("1, 2.5", ()) == [1.0, 2.5]
    with pytest.raises(ValidationError):
        parse_grid(",", ())


def test_run_writes_outputs(tmp_path, capsys):
    assert main(["run", "--policy", "sjf-bsbf", "--seed", "1", "--out", str(tmp_path)]) == 0
    (summary,) = read_csv(tmp_path / "summary.csv")
    assert list(summary) == SUMMARY_COLUMNS
    assert summary["jobs"] == "30" and summary["policy"] == "sjf-bsbf"
    assert len(read_csv(tmp_path / "jobs.csv")) == 30
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["config"]["seed"] == 1 and report["config"]["policy"] == "sjf_bsbf"
    assert "average_jct" in capsys.readouterr().out


def test_same_seed_same_files(tmp_path):
    for d in ("a", "b"):
        assert main(["run", "--policy", "tiresias", "--seed", "4", "--out", str(tmp_path / d)]) == 0
    for name in ("jobs.csv", "summary.csv", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_json_format(tmp_path):
    assert main(["run", "--policy", "fifo", "--format", "json", "--out", str(tmp_path)]) == 0
    (row,) = json.loads((tmp_path / "summary.json").read_text())
    assert row["policy"] == "fifo"


def test_missing_profile_exits_2(tmp_path, capsys):
    save_trace([job("a", 0, 10, task="resnet")], tmp_path / "t.jsonl")
    assert main(["run", "--trace", str(tmp_path / "t.jsonl"), "--out", str(tmp_path)]) == 2
    assert "resnet" in capsys.readouterr().err


def test_bad_interference_exits_2(tmp_path):
    assert main(["run", "--interference", "0.3", "--out", str(tmp_path)]) == 2


def test_unknown_policy_exits_2(tmp_path):
    assert main(["run", "--policy", "lottery", "--out", str(tmp_path)]) == 2


def test_compare(tmp_path, capsys):
    assert main(["compare", "--seed", "2", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "compare.csv")
    assert [r["policy"] for r in rows] == ["fifo", "sjf", "tiresias", "sjf-ffs", "sjf-bsbf"]
    assert len(capsys.readouterr().out.strip().splitlines()) == 6


def test_interference_sweep(tmp_path):
    args = ["sweep", "--dimension", "interference", "--policies", "sjf-ffs,sjf-bsbf", "--out", str(tmp_path)]
    assert main(args) == 0
    rows = read_csv(tmp_path / "sweep_interference.csv")
    assert len(rows) == 10
    assert sorted({float(r["interference"]) for r in rows}) == [1.0, 1.25, 1.5, 1.75, 2.0]


def test_load_sweep(tmp_path):
    args = ["sweep", "--dimension", "load", "--grid", "0.5,1", "--policies", "sjf", "--out", str(tmp_path)]
    assert main(args) == 0
    rows = read_csv(tmp_path / "sweep_load.csv")
    assert [int(r["jobs"]) for r in rows] == [15, 30]


def test_empty_grid_exits_2(tmp_path):
    assert main(["sweep", "--dimension", "interference", "--grid", ",", "--out", str(tmp_path)]) == 2


def test_load_sweep_rejects_a_fixed_trace(tmp_path):
    save_trace([job("a", 0, 10, task="ncf", batch=4096)], tmp_path / "t.jsonl")
    args = ["sweep", "--dimension", "load", "--trace", str(tmp_path / "t.jsonl"), "--out", str(tmp_path)]
    assert main(args) == 2


def test_gen_trace(tmp_path):
    assert main(["gen-trace", "--preset", "simulation", "--seed", "3", "--out", str(tmp_path)]) == 0
    jobs = load_trace(tmp_path / "simulation_seed3.jsonl")
    assert len(jobs) == 240
    assert main(["gen-trace", "--load", "2", "--out", str(tmp_path / "x.jsonl")]) == 0
    assert len(load_trace(tmp_path / "x.jsonl")) == 60


def test_verify_theorem(tmp_path, capsys):
    assert main(["verify-theorem", "--samples", "50", "--out", str(tmp_path)]) == 0
    assert "max_rel_violation=0.000e+00" in capsys.readouterr().out
    assert len(read_csv(tmp_path / "theorem.csv")) == 50


def test_theorem_rows_never_lose_to_the_grid():
    assert all(r["rel_gap"] <= 1e-9 for r in theorem_rows(200, 51, seed=9))
