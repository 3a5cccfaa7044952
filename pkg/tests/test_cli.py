import json

import numpy as np
import pytest

from insilico_mammo.config import set_default_table
from insilico_mammo.harness.cli import load_phantom, main
from insilico_mammo.harness.mhd import read_mhd_raw, write_mhd_raw


@pytest.fixture(autouse=True)
def _reset_table():
    yield
    set_default_table(None)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_generate_and_project(tmp_path, capsys):
    code, out = run(capsys, "generate", "--class", "fatty", "--mass-radius", 5, "--seed", 3,
                    "--out", tmp_path / "ph")
    assert code == 0
    info = json.loads(out.out)
    assert info["counts"]["mass"] > 0
    ph = load_phantom(tmp_path / "ph" / "phantom.mhd")
    assert ph.compressed and list(ph.labels.shape) == list(info["dims"])
    code, out = run(capsys, "project", "--phantom", tmp_path / "ph" / "phantom.mhd",
                    "--dose-scale", 1e6, "--out", tmp_path / "proj")
    assert code == 0
    img, h = read_mhd_raw(tmp_path / "proj" / "projection_DM1.mhd")
    assert img.shape == (224, 224) and np.all(np.isfinite(img)) and h["Units"] == "keV"


def test_project_case_flags_with_lesion(tmp_path, capsys):
    code, out = run(capsys, "project", "--class", "scattered", "--mass-radius", 7, "--dose", 40,
                    "--dose-scale", 1e6, "--no-grid", "--out", tmp_path)
    assert code == 0
    s = json.loads(out.out)
    assert (tmp_path / "projection_DM1.loc").exists() and s["lesion_px"] is not None


def test_moments(tmp_path, capsys):
    write_mhd_raw(np.full((4, 4), 2.0, np.float32), tmp_path / "a.mhd")
    code, out = run(capsys, "moments", tmp_path, "--out", tmp_path / "m.csv")
    assert code == 0
    assert out.out.splitlines()[1].endswith(",2.0,0.0,0.0,0.0,0.0")
    assert (tmp_path / "m.csv").read_text() == out.out


def test_evaluate(tmp_path, capsys):
    rng = np.random.default_rng(0)
    lines = ["reader_id,case_id,label,score"]
    for r in (1, 2):
        for c in range(20):
            lines.append(f"{r},{c},{c % 2},{rng.normal(c % 2)}")
    (tmp_path / "s.csv").write_text("\n".join(lines) + "\n")
    code, out = run(capsys, "evaluate", tmp_path / "s.csv", "--bootstrap", 200)
    assert code == 0
    (row,) = json.loads(out.out)
    assert row["readers"] == 2 and row["cases"] == 20 and row["bootstrap_variance"] > 0


def test_sweep_and_report(tmp_path, capsys):
    code, out = run(capsys, "sweep", "--grid-size", "reduced", "--cohort", 4, 4, 4, "--readers", 2,
                    "--dose-scale", 1e7, "--out", tmp_path / "sw")
    assert code == 0
    s = json.loads(out.out)
    assert len(s["studies"]) == 15 and s["errors"] == 0
    assert (tmp_path / "sw" / "results" / "plots" / "auc_vs_size.svg").exists()
    code, out = run(capsys, "report", tmp_path / "sw", "--out", tmp_path / "rep")
    assert code == 0 and "per-case minutes" in out.out
    assert (tmp_path / "rep" / "results" / "timing.csv").exists()


def test_errors_exit_2(tmp_path, capsys):
    code, out = run(capsys, "moments", tmp_path / "missing.mhd")
    assert code == 2 and "error" in out.err
    code, out = run(capsys, "sweep", "--cohort", 2, 2, 2, "--out", tmp_path)
    assert code == 2
    code, out = run(capsys, "generate", "--config", tmp_path / "nope.cfg")
    assert code == 2


def test_data_dir_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("INSILICO_MAMMO_DATA", str(tmp_path))
    from insilico_mammo.config import data_dir
    assert data_dir() == tmp_path
