"""Acceptance criteria 1-11; each test prints one PASS/FAIL line.

Criteria 4 (second half), 7 and 8 share one desk-scale run of the reduced
sweep, which is executed twice; expect this module to take about an hour
on a single core.
"""
import itertools
import logging
import math
import time

import numpy as np
import pytest

from conftest import random_array, random_record, record_criterion, slab_phantom
from insilico_mammo.compress import CompressionSpec, compress
from insilico_mammo.config import DensityClass
from insilico_mammo.errors import DoesNotFitError
from insilico_mammo.harness import GridPoint, SweepGrid, layout_path, parse_layout, run_sweep
from insilico_mammo.harness.locfile import format_loc, read_loc, write_loc
from insilico_mammo.harness.mhd import read_mhd_raw, spacing_of, write_mhd_raw
from insilico_mammo.lesion import generate_mass, place_mass
from insilico_mammo.phantom import Material, PhantomParams, derive_seed, generate_phantom
from insilico_mammo.reader import auc, image_moments, mrmc_bootstrap, mrmc_ci
from insilico_mammo.xproj import AcquisitionConfig, GridSpec, MaterialTable, ScatterMode, Spectrum
from insilico_mammo.xproj import simulate_projection
from test_stats import brute_auc, roe_metz

D, H, S, F = DensityClass.DENSE, DensityClass.HETERO, DensityClass.SCATTERED, DensityClass.FATTY


def bench(**kw):
    base = dict(histories=400_000, spectrum=Spectrum.monoenergetic(20.0), grid=GridSpec(enabled=False),
                electronic_noise_sigma=0.0, focal_spot_fwhm_um=0.0, detector_shape=(40, 40),
                detector_pitch_mm=0.5, binning=1, detector_origin_xy=(-10.0, -10.0))
    base.update(kw)
    return AcquisitionConfig(**base)


def compressed_case(dc, seed, radius=None):
    ph = generate_phantom(PhantomParams.defaults(dc, seed=seed))
    if radius:
        ph, _ = place_mass(ph, generate_mass(radius, derive_seed(seed, 1)),
                           np.random.default_rng(derive_seed(seed, 2)))
    return compress(ph, CompressionSpec.for_class(dc))


# -- 1 -----------------------------------------------------------------------------

SLABS = [(0.1, 6.0), (0.2, 5.0), (0.3, 4.0), (0.5, 3.0), (0.8, 2.0), (1.0, 1.0), (0.4, 1.5),
         (0.6, 2.5), (0.25, 2.0), (0.9, 3.0)]  # (mu cm^-1, thickness cm)


def test_c01_beer_lambert():
    t0 = time.perf_counter()
    worst_z, worst_ft = 0.0, 0.0
    for k, (mu, t) in enumerate(SLABS):
        # photo / Compton / Rayleigh split; only the total matters for the primary
        mat = MaterialTable.constant({Material.FAT: (0.4 * mu, 0.5 * mu, 0.1 * mu)},
                                     detector_mu_photo=1e4)
        ph = slab_phantom(t * 10)
        air = ph.evolve(labels=np.zeros_like(ph.labels))
        expect = math.exp(-mu * t)
        cfg = bench()
        a = simulate_projection(ph, cfg.evolve(seed=10 + 4 * k), mat).primary[10:30, 10:30].sum()
        b = simulate_projection(air, cfg.evolve(seed=11 + 4 * k), mat).primary[10:30, 10:30].sum()
        T = a / b
        n_a, n_b = a / (20.0 * T), b / 20.0  # photons landing in the region
        se = T * math.sqrt(1 / n_a + 1 / n_b)
        worst_z = max(worst_z, abs(T - expect) / se)
        ft = cfg.evolve(histories=1_000_000, scatter_mode=ScatterMode.FULL_TRANSPORT)
        fa = simulate_projection(ph, ft.evolve(seed=12 + 4 * k), mat).primary.sum()
        fb = simulate_projection(air, ft.evolve(seed=13 + 4 * k), mat).primary.sum()
        worst_ft = max(worst_ft, abs(fa / fb / expect - 1))
    dt = time.perf_counter() - t0
    ok = worst_z < 3 and worst_ft < 0.05 and dt < 120
    record_criterion(1, ok, f"Beer-Lambert: max |z| PO {worst_z:.2f} (<3), max FT primary error "
                            f"{100 * worst_ft:.2f}% (<5%), {dt:.0f} s (<120 s)")
    assert ok


# -- 2 -----------------------------------------------------------------------------

def test_c02_noise_dose_slope():
    ph = compressed_case(F, 5)
    hist, rel = [], []
    for dose in (20, 40, 60, 80, 100):
        cfg = AcquisitionConfig.for_class(F, dose, dose_scale=1e4)
        a = simulate_projection(ph, cfg.evolve(seed=1)).pre_noise
        b = simulate_projection(ph, cfg.evolve(seed=2)).pre_noise
        m = (a > 0) & (b > 0)
        # the difference cancels structure; normalising by the mean makes it dose-free
        rel.append(np.var((a - b)[m]) / 2 / np.mean(a[m]) ** 2)
        hist.append(cfg.histories)
    slope = np.polyfit(np.log(hist), np.log(rel), 1)[0]
    ok = abs(slope + 1) <= 0.1
    record_criterion(2, ok, f"noise-dose law: log-log slope {slope:.3f} (target -1 +/- 0.1)")
    assert ok


# -- 3 -----------------------------------------------------------------------------

def test_c03_energy_conservation():
    ph = compressed_case(F, 6, radius=7.0)
    cfg = AcquisitionConfig.for_class(F, 100, histories=1_000_000, seed=3,
                                      scatter_mode=ScatterMode.FULL_TRANSPORT)
    t = simulate_projection(ph, cfg).tallies
    out = sum(t["deposited_keV"].values()) + t["grid_keV"] + t["detector_keV"] + t["escaped_keV"]
    err = abs(out - t["emitted_keV"]) / t["emitted_keV"]
    ok = err <= 1e-3
    record_criterion(3, ok, f"energy conservation: relative imbalance {err:.2e} over 1e6 histories "
                            f"(<= 1e-3)")
    assert ok


# -- 4 -----------------------------------------------------------------------------

@pytest.fixture(scope="session")
def reduced_sweeps(tmp_path_factory):
    logging.getLogger("insilico_mammo").setLevel(logging.INFO)
    runs = []
    for threads in (1, 8):
        out = tmp_path_factory.mktemp(f"reduced_t{threads}")
        t0 = time.perf_counter()
        m = run_sweep(SweepGrid.reduced(), out, threads=threads)
        runs.append((m, time.perf_counter() - t0))
    return runs


def test_c04_determinism(reduced_sweeps):
    ph = compressed_case(F, 7, radius=5.0)
    same = True
    for mode in ScatterMode:
        cfg = AcquisitionConfig.for_class(F, 100, histories=200_000, seed=4, scatter_mode=mode)
        a = simulate_projection(ph, cfg, threads=1)
        b = simulate_projection(ph, cfg, threads=8)
        same &= bool(np.array_equal(a.pixels, b.pixels) and a.tallies == b.tallies)
    (m1, t1), (m2, t2) = reduced_sweeps
    hashes = m1.hash == m2.hash and m1.complete and m2.complete
    ok = same and hashes
    record_criterion(4, ok, f"determinism: 1 vs 8 workers identical {same}; reduced sweep hashes "
                            f"{m1.hash[:12]} / {m2.hash[:12]} equal {m1.hash == m2.hash} "
                            f"({t1 / 60:.0f} + {t2 / 60:.0f} min)")
    assert ok


# -- 5 -----------------------------------------------------------------------------

def test_c05_auc_oracle():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 201))
        y = rng.integers(0, 2, n)
        y[:2] = (0, 1)
        s = rng.integers(0, int(rng.integers(2, 30)), n) if rng.random() < 0.5 else rng.normal(size=n)
        worst = max(worst, abs(auc(s, y) - brute_auc(list(s), list(y))))
    ok = worst <= 1e-12
    record_criterion(5, ok, f"AUC oracle: max |Mann-Whitney - pairwise| {worst:.1e} on 1000 sets "
                            f"(<= 1e-12)")
    assert ok


# -- 6 -----------------------------------------------------------------------------

def test_c06_mrmc_vs_bootstrap():
    rng = np.random.default_rng(0)
    ratios = []
    for k in range(20):
        s, y = roe_metz(rng, readers=3, n1=20, n0=20, d=1.0, sr=0.05, se=0.2, sc=0.7)
        vb, _ = mrmc_bootstrap(s, y, n_boot=2000, seed=k)
        ratios.append(mrmc_ci(s, y).variance / vb)
    ratios = np.array(ratios)
    ok = bool(np.all(np.abs(ratios - 1) <= 0.25))
    record_criterion(6, ok, f"MRMC vs bootstrap: U/boot variance ratio range "
                            f"[{ratios.min():.3f}, {ratios.max():.3f}] over 20 studies (within 0.75-1.25)")
    assert ok


# -- 7, 8 --------------------------------------------------------------------------

def _ok_studies(manifest):
    return {(s["breast_density"], s["mass_size"], s["mass_density"], s["dose"]): s
            for s in manifest.studies if s["status"] == "ok"}


def _monotone_violations(rows):
    """rows sorted by the swept value; a drop counts if it exceeds the pooled half-width."""
    bad = []
    for a, b in itertools.combinations(rows, 2):
        tol = math.sqrt((a["half_width"] ** 2 + b["half_width"] ** 2) / 2)
        if b["auc"] < a["auc"] - tol:
            bad.append((a["point"], b["point"], a["auc"] - b["auc"], tol))
    return bad


def test_c07_trends(reduced_sweeps):
    st = _ok_studies(reduced_sweeps[0][0])
    notes, bad = [], []
    for dc in ("fatty", "scattered"):
        size = [st[(dc, r, 1.06, 100)] for r in (5.0, 7.0, 9.0)]
        dens = [st[(dc, 7.0, df, 100)] for df in (1.0, 1.06, 1.1)]
        bad += _monotone_violations(size) + _monotone_violations(dens)
        notes.append(f"{dc} size " + "/".join(f"{s['auc']:.3f}" for s in size)
                     + " df " + "/".join(f"{s['auc']:.3f}" for s in dens))
    fa, de = st[("fatty", 7.0, 1.06, 100)], st[("dense", 7.0, 1.06, 100)]
    tol = math.sqrt((fa["half_width"] ** 2 + de["half_width"] ** 2) / 2)
    dens_ok = fa["auc"] >= de["auc"] - tol
    notes.append(f"fatty {fa['auc']:.3f} vs dense {de['auc']:.3f}")
    ok = not bad and dens_ok
    record_criterion(7, ok, "trends: " + "; ".join(notes)
                     + (f"; violations {[(a, b, round(d, 3)) for a, b, d, _ in bad]}" if bad else ""))
    assert ok


def test_c08_dose_insensitivity(reduced_sweeps):
    st = _ok_studies(reduced_sweeps[0][0])
    rows = [st[("fatty", 7.0, 1.06, d)] for d in (20, 40, 60, 80, 100)]
    aucs = np.array([r["auc"] for r in rows])
    width = float(np.mean([r["ci_hi"] - r["ci_lo"] for r in rows]))
    spread = float(aucs.max() - aucs.min())
    ok = spread <= width
    record_criterion(8, ok, f"dose insensitivity: AUC " + "/".join(f"{a:.3f}" for a in aucs)
                     + f", range {spread:.3f} <= mean CI width {width:.3f}")
    assert ok


# -- 9 -----------------------------------------------------------------------------

def test_c09_insertion_feasibility():
    rates, hard_ok = {}, True
    for dc in (D, H, S, F):
        ok_counts = {5.0: 0, 7.0: 0, 9.0: 0}
        for seed in range(50):
            ph = generate_phantom(PhantomParams.defaults(dc, seed=seed))
            for r in (5.0, 7.0, 9.0):
                mass = generate_mass(r, derive_seed(seed, int(r)))
                try:
                    place_mass(ph, mass, np.random.default_rng(derive_seed(seed, 100 + int(r))))
                    ok_counts[r] += 1
                except DoesNotFitError:
                    pass
        for r, n in ok_counts.items():
            rates[(dc.value, r)] = n / 50
    for (dc, r), rate in rates.items():
        if r == 9.0 and dc in ("dense", "hetero"):
            hard_ok &= rate == 0.0
    soft = {k: v for k, v in rates.items() if not (k[1] == 9.0 and k[0] in ("dense", "hetero"))}
    ok = hard_ok and min(soft.values()) >= 0.95
    worst = min(soft, key=soft.get)
    record_criterion(9, ok, f"insertion feasibility: dense/hetero 9 mm always rejected {hard_ok}; "
                            f"lowest success {worst[0]} {worst[1]} mm {soft[worst]:.0%} (>= 95%)")
    assert ok


# -- 10 ----------------------------------------------------------------------------

def test_c10_io(tmp_path):
    rng = np.random.default_rng(10)
    mhd_ok = loc_ok = True
    for k in range(100):
        a, sp = random_array(rng)
        mhd, raw = write_mhd_raw(a, tmp_path / f"a{k}.mhd", spacing=sp)
        b, h = read_mhd_raw(mhd)
        mhd_ok &= b.dtype == a.dtype and b.shape == a.shape and b.tobytes() == a.tobytes()
        mhd_ok &= spacing_of(h) == sp and raw.read_bytes() == a.astype(a.dtype.newbyteorder("<")).tobytes()
        rec, px = random_record(rng)
        p = write_loc(rec, tmp_path / f"l{k}.loc", px)
        back = read_loc(p)
        loc_ok &= back == (rec, px) and format_loc(*back) == p.read_text().strip()
    pts = SweepGrid.full().points()
    paths = {}
    bij = len(pts) == 150
    for pt in pts:
        for cid in (1, 2, 149, 150):
            path = layout_path(pt, cid)
            bij &= parse_layout(path) == (pt, cid, cid % 2 == 1)
            paths[path] = (pt, cid)
    bij &= len(paths) == 150 * 4
    ok = mhd_ok and loc_ok and bij
    record_criterion(10, ok, f"I/O: 100 MHD round-trips {mhd_ok}, 100 loc round-trips {loc_ok}, "
                             f"layout bijective over {len(pts)} points {bij}")
    assert ok


# -- 11 ----------------------------------------------------------------------------

def brute_moments(img):
    x = [float(v) for v in np.ravel(img)]
    n = len(x)
    mean = math.fsum(x) / n
    c = [math.fsum((v - mean) ** k for v in x) / n for k in (2, 3, 4, 5)]
    sd = math.sqrt(c[0])
    return mean, c[0], c[1] / sd**3, c[2] / c[0] ** 2, c[3] / sd**5


def test_c11_moments():
    rng = np.random.default_rng(11)
    worst = 0.0
    for k in range(100):
        shape = tuple(int(v) for v in rng.integers(2, 40, 2))
        kind = k % 3
        img = (rng.normal(rng.uniform(-5, 50), rng.uniform(0.1, 10), shape) if kind == 0 else
               rng.gamma(rng.uniform(0.5, 5), 10.0, shape) if kind == 1 else
               rng.poisson(rng.uniform(1, 200), shape).astype(float))
        got, ref = image_moments(img), brute_moments(img)
        worst = max(worst, max(abs(g - r) / max(1.0, abs(r)) for g, r in zip(got, ref)))
    const = image_moments(np.full((16, 16), 7.25)) == (7.25, 0.0, 0.0, 0.0, 0.0)
    ok = worst <= 1e-10 and const
    record_criterion(11, ok, f"moments: max relative deviation {worst:.1e} on 100 images (<= 1e-10); "
                             f"constant image convention {const}")
    assert ok
