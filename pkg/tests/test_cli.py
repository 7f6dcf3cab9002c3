import json
import subprocess
import sys

import pytest

from pibounds import generators as G
from pibounds.cli import main

from conftest import make_m2


@pytest.fixture
def m2_file(tmp_path):
    path = tmp_path / "m2.json"
    G.save(make_m2(), path)
    return path


def gen(tmp_path, name, *args):
    out = tmp_path / name
    assert main(["generate", *args, "--out", str(out)]) == 0
    return out


def test_generate_byte_identical(tmp_path, capsys):
    a = gen(tmp_path, "a.json", "--family", "garnet", "--n", "5", "--m", "3", "--gamma", "0.9",
            "--seed", "7", "--branching", "2")
    b = gen(tmp_path, "b.json", "--family", "garnet", "--n", "5", "--m", "3", "--gamma", "0.9",
            "--seed", "7", "--branching", "2")
    assert a.read_bytes() == b.read_bytes()
    assert "n=5 m=3 gamma=0.9 family=garnet seed=7" in capsys.readouterr().out


def test_generate_from_spec(tmp_path):
    spec = json.dumps({"family": "deterministic", "n": 4, "m": 2, "gamma": 0.5, "seed": 1})
    out = gen(tmp_path, "d.json", "--spec", spec)
    assert G.load(out).is_deterministic


def test_generate_bad_input(tmp_path, capsys):
    code = main(["generate", "--family", "dense_random", "--n", "0", "--m", "2",
                 "--gamma", "0.9", "--out", str(tmp_path / "x.json")])
    assert code == 3
    assert "InvalidSpec" in capsys.readouterr().err


def test_solve_m2(m2_file, tmp_path, capsys):
    out = tmp_path / "trace.json"
    assert main(["solve", str(m2_file), "--variant", "howard", "--pi0", "[0, 0]",
                 "--out", str(out)]) == 0
    assert "iterations: 1" in capsys.readouterr().out
    trace = json.loads(out.read_text())
    assert trace["final_policy"] == [1, 0]
    assert trace["gaps_inf"][-1] == 0.0


def test_solve_iteration_limit(tmp_path):
    path = gen(tmp_path, "d.json", "--family", "dense_random", "--n", "6", "--m", "3",
               "--gamma", "0.99", "--seed", "4")
    assert main(["solve", str(path), "--variant", "simplex", "--max-iter", "1"]) == 2


def test_solve_missing_file(tmp_path):
    assert main(["solve", str(tmp_path / "missing.json")]) == 3


def test_solve_malformed(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["solve", str(bad)]) == 3


def test_verify_m2(m2_file, tmp_path, capsys):
    out = tmp_path / "verdict.json"
    assert main(["verify", str(m2_file), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "howard: PASS" in text and "simplex: PASS" in text
    assert "worst slack" in text
    assert {d["variant"] for d in json.loads(out.read_text())} == {"howard", "simplex"}


def test_verify_detects_forced_limit(m2_file, capsys):
    # m2 needs one switching iteration, so a limit of 1 step evaluation cannot finish
    assert main(["verify", str(m2_file), "--variant", "howard", "--max-iter", "1"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_structure_m2(m2_file, tmp_path, capsys):
    out = tmp_path / "s.json"
    assert main(["structure", str(m2_file), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "tau_r: 2.0" in text
    assert "assumption2: false" in text
    assert json.loads(out.read_text())["assumption1"] is True


def test_structure_two_block(tmp_path, capsys):
    path = gen(tmp_path, "tb.json", "--family", "two_block_assumption2", "--n", "4", "--m", "2",
               "--gamma", "0.9", "--t", "2", "--r", "2")
    assert main(["structure", str(path)]) == 0
    text = capsys.readouterr().out
    assert "assumption2: true" in text and "partition: T=[0, 1] R=[2, 3]" in text


def test_structure_budget(tmp_path, capsys):
    path = gen(tmp_path, "big.json", "--family", "dense_random", "--n", "10", "--m", "10",
               "--gamma", "0.9")
    assert main(["structure", str(path)]) == 2
    assert "10000000000" in capsys.readouterr().err


def test_structure_env_budget(m2_file, monkeypatch):
    monkeypatch.setenv("PI_BOUNDS_BUDGET", "2")
    assert main(["structure", str(m2_file)]) == 2


def sweep_config(tmp_path, name="cfg.json"):
    cfg = {
        "grids": [
            {"family": "dense_random", "n": 3, "m": 2, "gamma": [0.5, 0.9], "seeds": [0]},
            {"family": "garnet", "n": 4, "m": 2, "gamma": 0.9, "branching": 2,
             "seeds": {"start": 3, "count": 2}},
        ],
        "output_dir": str(tmp_path / "default_out"),
    }
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_sweep_outputs(tmp_path):
    cfg = sweep_config(tmp_path)
    assert main(["sweep", str(cfg)]) == 0
    summary = json.loads((tmp_path / "default_out" / "summary.json").read_text())
    assert len(summary["rows"]) == 8
    assert summary["failed"] == 0
    ids = [r["instance_id"] for r in summary["rows"]]
    assert ids == sorted(ids)
    csv_lines = (tmp_path / "default_out" / "summary.csv").read_text().splitlines()
    assert len(csv_lines) == 9


def test_sweep_byte_identical_across_jobs(tmp_path):
    cfg = sweep_config(tmp_path)
    outs = []
    for k, jobs in enumerate(["1", "1", "4"]):
        out = tmp_path / f"o{k}"
        assert main(["sweep", str(cfg), "--jobs", jobs, "--out", str(out)]) == 0
        outs.append(((out / "summary.json").read_bytes(), (out / "summary.csv").read_bytes()))
    assert outs[0] == outs[1] == outs[2]


def test_sweep_bad_config(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"grids": []}))
    assert main(["sweep", str(path)]) == 3


def test_module_entry_point(m2_file):
    proc = subprocess.run([sys.executable, "-m", "pibounds", "solve", str(m2_file)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "iterations:" in proc.stdout
