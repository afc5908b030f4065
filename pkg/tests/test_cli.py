import json

import pytest

from dpplab import fredholm
from dpplab.cli import main

RANK_ONE = {"kind": "spectral", "params": {"eigenvalues": [0.5], "basis": "legendre"}, "window": {"lo": [0], "hi": [1]}}
SINE = {"kind": "sine", "window": {"lo": [0], "hi": [3]}}


@pytest.fixture
def kernel_file(tmp_path):
    def write(cfg, name="k.json"):
        p = tmp_path / name
        p.write_text(json.dumps(cfg))
        return str(p)

    return write


def _artifacts(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.name != "manifest.json"}


def test_fredholm_rank_one(tmp_path, kernel_file, capsys):
    out = tmp_path / "f"
    assert main(["fredholm", "--kernel", kernel_file(RANK_ONE), "--method", "all", "--out", str(out)]) == 0
    report = json.loads(capsys.readouterr().out)
    for key in ("value_spectral", "value_series", "value_plemelj"):
        assert report[key] == pytest.approx(0.5, abs=1e-12)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == 0 and "fredholm.json" in manifest["artifacts"]
    assert manifest["config"]["kernel"] == RANK_ONE


def test_invalid_kernel_kind(tmp_path, kernel_file):
    out = tmp_path / "bad"
    assert main(["sample", "--kernel", kernel_file({"kind": "nope", "window": {"lo": [0], "hi": [1]}}), "--out", str(out)]) == 2
    assert not out.exists()


def test_missing_kernel_file(tmp_path):
    assert main(["sample", "--kernel", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 2


def test_sample_byte_identical(tmp_path, kernel_file):
    k = kernel_file(SINE)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sample", "--kernel", k, "--n", "25", "--seed", "42", "--out", str(a)]) == 0
    assert main(["sample", "--kernel", k, "--n", "25", "--seed", "42", "--out", str(b)]) == 0
    assert _artifacts(a) == _artifacts(b)
    assert len(_artifacts(a)) == 26
    summary = json.loads((a / "summary.json").read_text())
    assert summary["seed"] == 42 and sum(summary["count_histogram"]) == 25


def test_replay(tmp_path, kernel_file, capsys):
    a = tmp_path / "a"
    assert main(["sample", "--kernel", kernel_file(SINE), "--n", "10", "--seed", "3", "--out", str(a)]) == 0
    assert main(["replay", str(a / "manifest.json"), "--out", str(tmp_path / "r")]) == 0
    assert "replay ok" in capsys.readouterr().out
    assert _artifacts(a) == _artifacts(tmp_path / "r")


def test_numerical_failure_exit_code(tmp_path, kernel_file, monkeypatch):
    monkeypatch.setattr(fredholm, "ROUTE_GAP_TOL", -1.0)
    out = tmp_path / "f"
    assert main(["fredholm", "--kernel", kernel_file(RANK_ONE), "--out", str(out)]) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == 3
    assert manifest["errors"] and "disagree" in manifest["errors"][0]["message"]


def test_window_override(tmp_path, kernel_file, capsys):
    out = tmp_path / "f"
    assert main(["fredholm", "--kernel", kernel_file(SINE), "--window", "0,0.5", "--method", "spectral", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["window"] == [0.0, 0.5]


def test_thin(tmp_path, kernel_file):
    cfg = {"kind": "projection-fourier", "params": {"n": 4}, "window": {"lo": [0], "hi": [1]}}
    out = tmp_path / "t"
    assert main(["thin", "--kernel", kernel_file(cfg), "--z", "0.3", "--n", "20", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["rank_after"] == 3 and summary["count_histogram"] == [0, 0, 0, 20]


def test_count_law(tmp_path, kernel_file):
    out = tmp_path / "c"
    assert main(["count-law", "--kernel", kernel_file(RANK_ONE), "--n", "1000", "--out", str(out)]) == 0
    report = json.loads((out / "count_law.json").read_text())
    assert report["n_samples"] == 1000 and not report["flagged"]


def test_correlations(tmp_path, kernel_file):
    out = tmp_path / "corr"
    assert main(["correlations", "--kernel", kernel_file(SINE), "--n", "150", "--bins", "6", "--out", str(out)]) == 0
    lines = (out / "rho1.csv").read_text().splitlines()
    assert lines[0] == "box_lo,box_hi,estimate,stderr,analytic" and len(lines) == 7
    assert (out / "rho2.csv").exists()


def test_diffuse(tmp_path):
    out = tmp_path / "d" / "traj.csv"
    assert main(["diffuse", "--n", "4", "--theta", "1", "--T", "2", "--dt", "1e-3", "--seed", "7", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "time,x1,x2,x3,x4" and len(lines) == 2002
    report = json.loads((out.parent / "report.json").read_text())
    assert report["ordering_violations"] == 0
    assert report["stationarity"]["reference"] == "gue"


def test_diffuse_invalid(tmp_path):
    assert main(["diffuse", "--dt", "-1", "--out", str(tmp_path / "x")]) == 2
    assert not (tmp_path / "x").exists()


def test_modelc(tmp_path):
    out = tmp_path / "m"
    assert main(["modelc", "--demo", "gaussian", "--grid", "256", "--mass", "1", "--seed", "3", "--out", str(out)]) == 0
    assert (out / "series.csv").read_text().splitlines()[0] == "t,mean_x,mean_p,width,norm"
    report = json.loads((out / "report.json").read_text())
    assert report["ehrenfest"]["linear_residual"] < 1e-8
    assert report["commutator"]["residual"] < 1e-6
    assert main(["modelc", "--demo", "other", "--out", str(tmp_path / "n")]) == 2
