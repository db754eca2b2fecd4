import json
import subprocess
import sys
from pathlib import Path

import pytest

from abelia.cli import run
from abelia.graph import ElaborationReport, elaborate

from test_graph import SPECS, spec

EXPECTED = {
    "fma.json": 0,
    "pga_bivector.json": 0,
    "fmv.json": 1,
    "grad_accum.json": 1,
    "pga_project_odd.json": 1,
    "malformed_cycle.json": 2,
    "malformed_json.json": 2,
    "malformed_unknown_node.json": 2,
}


def test_corpus_is_covered():
    assert sorted(p.name for p in SPECS.glob("*.json")) == sorted(EXPECTED)


@pytest.mark.parametrize("name,code", sorted(EXPECTED.items()))
def test_check_exit_codes(name, code, capsys):
    assert run(["check", str(SPECS / name), "--no-timing"]) == code
    out, err = capsys.readouterr()
    if code == 2:
        assert "malformed spec" in err
    else:
        assert out.endswith("\n")


def test_check_fma_human(capsys):
    assert run(["check", str(SPECS / "fma.json"), "--no-timing"]) == 0
    out = capsys.readouterr().out
    assert "kg*m*s^-2" in out


def test_check_fmv_residual(capsys):
    assert run(["check", str(SPECS / "fmv.json"), "--json"]) == 1
    report = json.loads(capsys.readouterr().out)
    assert not report["accepted"]
    assert any("s^-1" in e["message"] for e in report["errors"])


@pytest.mark.parametrize("name", ["fma.json", "fmv.json", "pga_bivector.json", "grad_accum.json"])
def test_check_json_round_trip(name, capsys):
    run(["check", str(SPECS / name), "--json"])
    out = capsys.readouterr().out
    assert out.endswith("\n")
    parsed = ElaborationReport.loads(out)
    assert parsed == elaborate(spec(name))
    assert parsed.dumps() == out


def test_cayley(capsys):
    assert run(["cayley", "3", "0", "1", "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["blades"] == 16 and out["entries"] == 256 and len(out["rows"]) == 256
    assert run(["cayley", "3", "0", "1"]) == 0
    assert "e0" in capsys.readouterr().out


def test_sparsity(capsys):
    assert run(["sparsity", "3", "0", "1", "--grades", "2", "2", "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["nonzero"] == 27 and out["total"] == 36
    assert out["result_grades"] == [0, 2, 4]


def test_usage_errors(capsys):
    assert run(["bogus"]) == 2
    assert "usage" in capsys.readouterr().err
    assert run([]) == 2
    assert run(["cayley", "3", "0"]) == 2
    assert run(["cayley", "-1", "0", "0"]) == 2
    assert run(["check", "/nonexistent/spec.json"]) == 2


def test_grad(capsys):
    inputs = json.dumps({"m": 2.0, "a": 3.0, "F": 6.0})
    code = run(["grad", str(SPECS / "fma.json"), "--seed", "m", "--inputs", inputs, "--json"])
    out = json.loads(capsys.readouterr().out)
    assert code == 0
    assert out["closure_accepted"]
    tangents = {n["id"]: n for n in out["nodes"]}
    assert tangents["loss"]["tangent"] == -3.0 and tangents["loss"]["tangent_dim"] == "m*s^-2"


def test_mdl_verify(capsys):
    assert run(["mdl-verify", "--trials", "20", "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["trials"] == 20 and out["disagreed"] == 0
    assert run(["mdl-verify", "--vars", "9"]) == 2


def test_drift(capsys):
    assert run(["drift", "3", "0", "1", "--steps", "200", "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["exact_max"] == 0.0
    assert out["naive_max"] > 0.0


def test_gate(tmp_path, capsys):
    before = tmp_path / "b.json"
    before.write_text(json.dumps({"family": "gaussian", "params": {"mean": [0], "variance": [1]}}))
    domain = json.dumps({"family": "gaussian", "params": {"mean": [1], "variance": [1]}})
    after = json.dumps({"family": "gaussian", "params": {"mean": [0.3], "variance": [1]}})
    assert run(["gate", "--before", str(before), "--after", after, "--domain", domain, "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["decision"] == "accept"
    assert abs(out["state_change"] - 0.045) < 1e-12
    assert run(["gate", "--before", str(before), "--after", after, "--domain", str(before)]) == 1
    assert "reject" in capsys.readouterr().out
    assert run(["gate", "--before", "{}", "--after", after, "--domain", domain]) == 2


def test_config_env(tmp_path, monkeypatch, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"format": "json"}))
    monkeypatch.setenv("ABELIA_CONFIG", str(cfg))
    assert run(["check", str(SPECS / "fma.json")]) == 0
    json.loads(capsys.readouterr().out)
    cfg.write_text(json.dumps({"stack_limit": -1}))
    assert run(["check", str(SPECS / "fma.json")]) == 2
    cfg.write_text(json.dumps({"eps_budget": 1e-3}))
    # the flag wins over the file
    assert run(["check", str(SPECS / "fma.json"), "--eps", "1e-9", "--json"]) == 0
    tight = json.loads(capsys.readouterr().out)
    monkeypatch.delenv("ABELIA_CONFIG")
    run(["check", str(SPECS / "fma.json"), "--eps", "1e-9", "--json"])
    assert json.loads(capsys.readouterr().out) == tight


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "abelia", "check", str(SPECS / "fmv.json")],
                          capture_output=True, text=True, cwd=Path(__file__).parent)
    assert proc.returncode == 1
