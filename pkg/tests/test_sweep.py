import errno
from collections import Counter, defaultdict
from pathlib import Path

import numpy as np
import pytest

from insilico_mammo.config import DensityClass
from insilico_mammo.errors import ConfigurationError, GenerationError
from insilico_mammo.harness import GridPoint, RunManifest, SweepGrid, SweepIOError, run_sweep, timing_report
from insilico_mammo.harness import sweep as sweep_mod
from insilico_mammo.harness.layout import parse_layout
from insilico_mammo.harness.sweep import MANIFEST_NAME, case_seeds, split_of

F = DensityClass.FATTY
FAST = {"max_epochs": 4, "patience": 2}


def tiny_grid(points=(GridPoint(F, 5.0, 1.0, 100),), **kw):
    base = dict(explicit_points=tuple(points), cohort=(4, 4, 4), dose_scale=1e6, reader_seeds=(1, 2))
    base.update(kw)
    return SweepGrid(**base)


def test_full_grid_150_points():
    pts = SweepGrid.full().points()
    assert len(pts) == 4 * 3 * 3 * 5 - 2 * 1 * 3 * 5 == 150
    assert not any(p.mass_radius == 9.0 and p.density_class in (DensityClass.DENSE, DensityClass.HETERO)
                   for p in pts)
    assert len(SweepGrid.reduced().points()) == 15


def test_grid_validation():
    with pytest.raises(ConfigurationError):
        SweepGrid(densities=(DensityClass.DENSE,), mass_radii=(9.0,)).validate()
    with pytest.raises(ConfigurationError):
        tiny_grid(protocol="other").validate()
    with pytest.raises(ConfigurationError):
        tiny_grid(reader_seeds=(1,)).validate()
    with pytest.raises(ConfigurationError):
        tiny_grid(protocol="fixed_train").validate()  # no reference point


def test_cohort_ids_and_splits():
    ids = range(1, 11)
    assert [i for i in ids if i % 2] == [1, 3, 5, 7, 9]
    splits = Counter((split_of(i, (4, 4, 2)), i % 2) for i in ids)
    assert splits == {("train", 1): 2, ("train", 0): 2, ("val", 1): 2, ("val", 0): 2,
                      ("test", 1): 1, ("test", 0): 1}
    cohort = (100, 25, 25)
    sp = Counter(split_of(i, cohort) for i in range(1, 151))
    assert sp == {"train": 100, "val": 25, "test": 25}


def test_case_seeds_sharing():
    g = SweepGrid()
    a = case_seeds(g, GridPoint(F, 5.0, 1.0, 100), 3)
    b = case_seeds(g, GridPoint(F, 5.0, 1.1, 40), 3)
    c = case_seeds(g, GridPoint(F, 7.0, 1.0, 100), 3)
    assert a["phantom"] == b["phantom"] == c["phantom"]
    assert a["mass"] == b["mass"] != c["mass"]
    assert a["projection"] != b["projection"]
    assert case_seeds(g, GridPoint(F, 5.0, 1.0, 100), 4)["mass"] is None
    assert case_seeds(g, GridPoint(DensityClass.DENSE, 5.0, 1.0, 100), 3)["phantom"] != a["phantom"]


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("sw")
    m = run_sweep(tiny_grid(), out, train_kw=FAST)
    return out, m


def test_tiny_sweep_outputs(tiny_run):
    out, m = tiny_run
    assert m.complete and m.error_count == 0 and len(m.cases) == 12
    paths = [f["path"] for f in m.all_files()]
    assert len(paths) == len(set(paths))
    emitted = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()} - {MANIFEST_NAME}
    assert emitted == set(paths)
    for f in m.all_files():
        if f["sha256"] is not None:
            assert sweep_mod.sha256_file(out / f["path"]) == f["sha256"]
    # odd ids carry .loc files, layout parse recovers the case
    for c in m.cases:
        exts = sorted(Path(f["path"]).suffix for f in c["files"])
        assert exts == ([".loc", ".mhd", ".raw"] if c["case_id"] % 2 else [".mhd", ".raw"])
        pt, cid, lesion = parse_layout(Path(c["files"][0]["path"]).parent)
        assert cid == c["case_id"] and lesion == c["lesion"] and pt.key() == c["point"]
    (st,) = m.studies
    assert st["status"] == "ok" and st["n_test"] == 4 and 0 <= st["auc"] <= 1
    loaded = RunManifest.load(out / MANIFEST_NAME)
    assert loaded.hash == m.hash == loaded.compute_hash()


def test_tiny_sweep_deterministic(tiny_run, tmp_path):
    _, m = tiny_run
    m2 = run_sweep(tiny_grid(), tmp_path, threads=3, train_kw=FAST)
    assert m2.hash == m.hash


def test_fault_injection_fail_soft(tmp_path):
    bad = {(3, "insertion"), (11, "projection"), (6, "phantom")}

    def fault(point, cid, stage):
        if (cid, stage) in bad:
            raise GenerationError(f"injected {stage}")

    m = run_sweep(tiny_grid(cohort=(4, 4, 6)), tmp_path, fault=fault, train_kw=FAST, plots=False)
    assert m.complete and m.error_count == len(bad)
    assert {(c["case_id"], c["error"]["stage"]) for c in m.errors} == bad
    assert all(not c["files"] for c in m.errors)
    assert m.studies[0]["status"] == "ok" and m.studies[0]["n_test"] == 5


def test_io_error_partial_manifest(tmp_path, monkeypatch):
    real = sweep_mod.write_mhd_raw
    calls = {"n": 0}

    def flaky(*a, **kw):
        calls["n"] += 1
        if calls["n"] == 4:
            raise OSError(errno.ENOSPC, "No space left on device")
        return real(*a, **kw)

    monkeypatch.setattr(sweep_mod, "write_mhd_raw", flaky)
    with pytest.raises(SweepIOError) as ei:
        run_sweep(tiny_grid(), tmp_path, train_kw=FAST)
    m = ei.value.manifest
    assert m is not None and not m.complete and len(m.cases) == 4
    saved = RunManifest.load(tmp_path / MANIFEST_NAME)
    assert not saved.complete and len(saved.cases) == 4
    (tmp_path / "blocker").write_text("")
    with pytest.raises(SweepIOError):
        run_sweep(tiny_grid(), tmp_path / "blocker" / "sub", train_kw=FAST)


def test_fixed_train_protocol(tmp_path):
    pts = (GridPoint(F, 7.0, 1.06, 100), GridPoint(F, 7.0, 1.06, 40))
    calls = []
    real = sweep_mod.train_reader

    def counting(*a, **kw):
        calls.append(1)
        return real(*a, **kw)

    sweep_mod.train_reader = counting
    try:
        m = run_sweep(tiny_grid(pts, protocol="fixed_train"), tmp_path, train_kw=FAST, plots=False)
    finally:
        sweep_mod.train_reader = real
    assert len(calls) == 2  # two reader seeds, trained once at the reference point
    assert [s["status"] for s in m.studies] == ["ok", "ok"]
    assert {s["protocol"] for s in m.studies} == {"fixed_train"}


def test_timing_report(tiny_run):
    _, m = tiny_run
    assert timing_report({"cases": []}) == []
    rows = timing_report(m)
    raw = defaultdict(list)
    for c in m.cases:
        for stage, v in c["timings"].items():
            raw[stage].append(v)
    for r in rows:
        assert r["breast_density"] == "fatty" and r["mass_size"] == 5.0
        assert r["n_cases"] == len(raw[r["stage"]])
        assert r["mean_minutes"] == pytest.approx(np.mean(raw[r["stage"]]) / 60, rel=1e-12)
    assert {r["stage"] for r in rows} == {"phantom", "insertion", "compression", "projection"}
    ins = next(r for r in rows if r["stage"] == "insertion")
    assert ins["n_cases"] == 6
