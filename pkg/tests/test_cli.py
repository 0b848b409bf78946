import json
import shutil
import subprocess

import pytest

from persistlab import cli
from persistlab.scenarios import scenario_doc


def _run(tmp_path, *argv, out="out"):
    d = tmp_path / out
    code = cli.main([*argv, "--out", str(d)])
    return code, d


def _json(p):
    return json.loads(p.read_text())


def _write_doc(tmp_path, name, doc):
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps(doc))
    return str(p)


# ------------------------------------------------------------ analyze

def test_analyze_crossdiff_persistence(tmp_path):
    code, d = _run(tmp_path, "analyze", "--scenario", "crossdiff_persistence", "--grid", "100")
    assert code == cli.EXIT_OK
    rep = _json(d / "report.json")
    assert rep["v_unstable"] is True and rep["tau"] > 1
    assert (d / "psi.csv").exists() and (d / "metadata.json").exists()


def test_analyze_missing_file(tmp_path):
    code, _ = _run(tmp_path, "analyze", "--scenario", str(tmp_path / "nope.json"))
    assert code == cli.EXIT_INVALID


def test_analyze_malformed_and_unknown_keys(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"k": 1,\n "system": }')
    assert _run(tmp_path, "analyze", "--scenario", str(bad))[0] == cli.EXIT_INVALID
    doc = scenario_doc("diag_extinction")
    doc["colour"] = "red"
    assert _run(tmp_path, "analyze", "--scenario", _write_doc(tmp_path, "x", doc))[0] == cli.EXIT_INVALID


def test_analyze_solver_failure(tmp_path):
    doc = scenario_doc("diag_extinction")
    doc["system"]["blocks"]["g11"] = {"name": "zero", "params": {}}
    code, _ = _run(tmp_path, "analyze", "--scenario", _write_doc(tmp_path, "nogrowth", doc))
    assert code == cli.EXIT_SOLVER


def test_analyze_two_grids(tmp_path):
    code, d = _run(tmp_path, "analyze", "--scenario", "diag_extinction", "--grid", "50",
                   "--grid", "400")
    assert code == cli.EXIT_OK
    idx = _json(d / "report.json")
    t50, t400 = (_json(d / f"report_n{n}.json")["tau"] for n in (50, 400))
    assert idx["tau"] == [t50, t400]
    # second-order refinement: |tau_50 - tau_400| ~ C (pi/50)^2
    assert abs(t50 - t400) < 0.01 * t400


def test_analyze_deterministic(tmp_path):
    args = ("analyze", "--scenario", "coop_persistence", "--grid", "80")
    _, d1 = _run(tmp_path, *args, out="a")
    _, d2 = _run(tmp_path, *args, out="b")
    assert (d1 / "report.json").read_bytes() == (d2 / "report.json").read_bytes()
    assert (d1 / "psi.csv").read_bytes() == (d2 / "psi.csv").read_bytes()


def test_bad_flags(tmp_path):
    assert _run(tmp_path, "analyze", "--scenario", "diag_extinction", "--tol", "-1")[0] == cli.EXIT_INVALID
    assert cli.main(["frobnicate"]) == cli.EXIT_INVALID


# ------------------------------------------------------------ simulate

def test_simulate_diag_extinction(tmp_path):
    code, d = _run(tmp_path, "simulate", "--scenario", "diag_extinction", "--grid", "60",
                   "--dt", "1e-3", "--t-end", "6")
    assert code == cli.EXIT_OK
    assert _json(d / "verdict.json")["verdict"] == "extinct"
    assert (d / "trajectory.csv").exists() and (d / "analytic-comparison.json").exists()


def test_simulate_crossdiff_persistence(tmp_path):
    code, d = _run(tmp_path, "simulate", "--scenario", "crossdiff_persistence", "--grid", "80",
                   "--dt", "1e-3", "--t-end", "10")
    assert code == cli.EXIT_OK
    v = _json(d / "verdict.json")
    assert v["verdict"] == "persists"
    assert v["growth_check"]["passed"]


def test_simulate_explicit_unstable_dt(tmp_path, capsys):
    code, _ = _run(tmp_path, "simulate", "--scenario", "diag_extinction", "--grid", "100",
                   "--scheme", "explicit", "--dt", "1e-2", "--t-end", "0.1")
    assert code == cli.EXIT_INVALID
    assert "stability" in capsys.readouterr().err


def test_simulate_blowup_keeps_outputs(tmp_path):
    doc = scenario_doc("diag_extinction")
    doc["system"]["blocks"]["g22"] = {"name": "constant", "params": {"value": [[200.0, 0.0], [0.0, 200.0]]}}
    doc.pop("reference")
    code, d = _run(tmp_path, "simulate", "--scenario", _write_doc(tmp_path, "boom", doc),
                   "--grid", "40", "--dt", "1e-3", "--t-end", "1")
    assert code == cli.EXIT_BLOWUP
    assert (d / "trajectory.csv").exists()
    assert _json(d / "verdict.json")["trajectory"]["blowup"] is True


# ------------------------------------------------------------ certify

@pytest.mark.parametrize("case", ["lbt_case_i", "lbt_case_ii", "lbt_case_iii"])
def test_certify_cases(tmp_path, case):
    code, d = _run(tmp_path, "certify", "--scenario", case)
    assert code == cli.EXIT_OK
    cert = _json(d / "certificate.json")
    assert cert["certified"] is True


def test_certify_block_violation(tmp_path, capsys):
    code, _ = _run(tmp_path, "certify", "--scenario", "block_violation")
    assert code == cli.EXIT_UNCERTIFIABLE
    assert "block condition fails" in capsys.readouterr().err


def test_certify_kappa_zero(tmp_path, capsys):
    code, _ = _run(tmp_path, "certify", "--scenario", "lbt_case_ii", "--kappa", "0")
    assert code == cli.EXIT_UNCERTIFIABLE
    assert "(MPpos) fails" in capsys.readouterr().err


def test_certify_from_file(tmp_path):
    cfg = dict(cli.CERT_CASES["lbt_case_ii"])
    code, _ = _run(tmp_path, "certify", "--scenario", _write_doc(tmp_path, "cfg", cfg))
    assert code == cli.EXIT_OK
    del cfg["kappa"]
    code, _ = _run(tmp_path, "certify", "--scenario", _write_doc(tmp_path, "cfg2", cfg))
    assert code == cli.EXIT_INVALID


# ------------------------------------------------------------ counterexample and sweep

def test_counterexample(tmp_path):
    code, d = _run(tmp_path, "counterexample", "--grid", "60", "--dt", "1e-3", "--t-end", "6")
    assert code == cli.EXIT_OK
    summary = _json(d / "summary.json")
    text = json.dumps(summary)
    for name in ("diag_extinction", "crossdiff_extinction", "crossdiff_persistence"):
        assert name in text
        assert (d / name / "verdict.json").exists()


def test_sweep_in_pool(tmp_path, monkeypatch):
    monkeypatch.setenv("PERSISTLAB_THREADS", "2")
    code, d = _run(tmp_path, "sweep", "--scenario", "diag_extinction", "--scenario",
                   "coop_persistence", "--grid", "40", "--grid", "80")
    assert code == cli.EXIT_OK
    runs = _json(d / "sweep.json")["runs"]
    assert len(runs) == 4
    for r in runs:
        assert (d / f"{r['scenario']}_n{r['n']}" / "report.json").exists()
    # per-run output equals a serial run
    monkeypatch.setenv("PERSISTLAB_THREADS", "1")
    _, d1 = _run(tmp_path, "sweep", "--scenario", "diag_extinction", "--grid", "40", out="serial")
    assert (d / "diag_extinction_n40" / "report.json").read_bytes() == \
        (d1 / "diag_extinction_n40" / "report.json").read_bytes()


def test_sweep_bad_threads(tmp_path, monkeypatch):
    monkeypatch.setenv("PERSISTLAB_THREADS", "zero")
    assert _run(tmp_path, "sweep", "--scenario", "diag_extinction")[0] == cli.EXIT_INVALID


@pytest.mark.skipif(shutil.which("persistlab") is None, reason="console script not installed")
def test_console_script(tmp_path):
    r = subprocess.run(["persistlab", "certify", "--scenario", "block_violation", "--out",
                        str(tmp_path / "o")], capture_output=True, text=True)
    assert r.returncode == 5
