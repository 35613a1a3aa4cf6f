import json
import subprocess
import sys

import pytest

from abelian_higgs.cli import main


def test_verify_dec_manifest(tmp_path, capsys):
    out = tmp_path / "m.json"
    assert main(["verify-dec", "--json", str(out), "--seed", "3"]) == 0
    m = json.loads(out.read_text())
    assert m["subcommand"] == "verify-dec" and m["seed"] == 3 and m["passed"]
    assert len(m["config_hash"]) == 16
    assert {"name", "lhs", "rhs", "tolerance", "pass"} <= set(m["checks"][0])
    assert m["extra"]["derived"]["rho0"] == pytest.approx(10.0)
    assert "PASS" in capsys.readouterr().out


def test_operator_tolerance_override_fails(tmp_path):
    assert main(["verify-operators", "--tol", "1e-15", "--json", str(tmp_path / "m.json")]) == 1
    m = json.loads((tmp_path / "m.json").read_text())
    assert not m["passed"]


def test_operator_decay_csv(tmp_path):
    assert main(["verify-operators", "--r-cut", "2..5", "--loc-L", "12", "--csv-dir", str(tmp_path)]) == 0
    text = (tmp_path / "decay_table.csv").read_text().splitlines()
    assert text[0].startswith("# config_hash=") and "seed=" in text[0]
    assert len(text) == 2 + 4


def test_bad_config_exit_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[lattice]\nL = 1\n")
    assert main(["verify-dec", "--config", str(bad)]) == 2
    assert main(["verify-dec", "--config", str(tmp_path / "none.toml")]) == 2
    assert main(["verify-operators", "--r-cut", "x..y"]) == 2
    assert main(["nonsense"]) == 2
    assert main(["verify-dec", "--seed", "-1"]) == 2


def test_expansion_guard_and_family(tmp_path):
    assert main(["expansion", "--region-L", "40"]) == 2
    assert main(["expansion", "--vertex", "nope"]) == 2
    assert main(["expansion", "--vertex", "quartic", "--csv-dir", str(tmp_path)]) == 0
    assert (tmp_path / "coefficients_quartic.csv").exists()


def test_equivalence_low_statistics_advice(tmp_path):
    out = tmp_path / "eq.json"
    code = main(["equivalence", "--samples", "2000", "--json", str(out)])
    m = json.loads(out.read_text())
    assert code == 1
    assert "increase --samples" in m["extra"]["advice"]


def test_massgap_outputs_deterministic(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[mc]\nL = 12\nsweeps = 6000\nthermalization = 1000\nstride = 5\nframe = 2\n")
    runs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        main(["massgap", "--config", str(cfg), "--csv-dir", str(d), "--json", str(d / "m.json")])
        runs.append((d / "correlator.csv").read_text())
    assert runs[0] == runs[1]
    assert (tmp_path / "run0" / "large_field.csv").exists()


def test_console_script_help():
    r = subprocess.run([sys.executable, "-m", "abelian_higgs.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for sub in ("verify-dec", "verify-operators", "equivalence", "expansion", "massgap"):
        assert sub in r.stdout
