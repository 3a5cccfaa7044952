"""Result tables, timing report and SVG trend plots for a sweep manifest."""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..config import DensityClass

RESULT_COLUMNS = ("point", "breast_density", "mass_size", "mass_density", "dose", "protocol",
                  "n_test", "auc", "ci_lo", "ci_hi", "half_width", "variance", "reader_aucs",
                  "method", "status")
TIMING_COLUMNS = ("breast_density", "mass_size", "stage", "n_cases", "mean_minutes")
CLASS_ORDER = [d.value for d in DensityClass]  # dense, hetero, scattered, fatty


def _as_dict(manifest):
    return manifest if isinstance(manifest, dict) else manifest.to_dict()


def results_table(manifest) -> list:
    rows = []
    for s in _as_dict(manifest)["studies"]:
        r = {k: s.get(k, "") for k in RESULT_COLUMNS}
        if isinstance(r["reader_aucs"], list):
            r["reader_aucs"] = " ".join(repr(float(a)) for a in r["reader_aucs"])
        rows.append(r)
    return rows


def write_csv(rows, columns, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path


def timing_report(manifest) -> list:
    """Mean wall-clock minutes per (breast density, mass size, stage).

    Only cases whose stage was actually computed count; reused negative
    projections carry no timings.
    """
    acc = defaultdict(list)
    for c in _as_dict(manifest)["cases"]:
        sg = c["subgroup"]
        for stage, sec in (c.get("timings") or {}).items():
            acc[(sg["breast_density"], float(sg["mass_size"]), stage)].append(float(sec))
    rows = []
    for (dc, size, stage), v in sorted(acc.items(), key=lambda kv: (
            CLASS_ORDER.index(kv[0][0]), kv[0][1], kv[0][2])):
        rows.append({"breast_density": dc, "mass_size": size, "stage": stage,
                     "n_cases": len(v), "mean_minutes": float(np.mean(v)) / 60.0})
    return rows


def per_case_minutes(manifest) -> dict:
    """Mean total per-case minutes by breast density, over computed cases."""
    acc = defaultdict(list)
    for c in _as_dict(manifest)["cases"]:
        t = c.get("timings") or {}
        if "projection" in t:
            acc[c["subgroup"]["breast_density"]].append(sum(t.values()) / 60.0)
    return {k: float(np.mean(v)) for k, v in acc.items()}


# -- plots --------------------------------------------------------------------

def _plot_lines(series, xlabel, title, path, xticks=None):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "insilico-mammo"
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for label, pts in series.items():
        pts = sorted(pts)
        x = [p[0] for p in pts]
        y = np.array([p[1] for p in pts])
        err = np.array([[p[1] - p[2] for p in pts], [p[3] - p[1] for p in pts]])
        ax.errorbar(x, y, yerr=err, marker="o", capsize=3, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("AUC")
    ax.set_ylim(0.3, 1.02)
    if xticks is not None:
        ax.set_xticks(range(len(xticks)))
        ax.set_xticklabels(xticks)
    ax.set_title(title, fontsize=9)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def trend_plots(manifest, out_dir) -> list:
    """AUC vs mass size, mass density, breast density and dose, one SVG each."""
    ok = [s for s in _as_dict(manifest)["studies"] if s.get("status") == "ok"]
    out_dir = Path(out_dir)
    paths = []

    def collect(fixed, xkey, group="breast_density"):
        series = defaultdict(list)
        for s in ok:
            if all(s[k] == v for k, v in fixed.items()):
                series[s[group]].append((s[xkey], s["auc"], s["ci_lo"], s["ci_hi"]))
        return {k: v for k, v in series.items() if len(v) > 1}

    specs = [
        ({"mass_density": 1.06, "dose": 100}, "mass_size", "mass radius (mm)", "auc_vs_size.svg"),
        ({"mass_size": 7.0, "dose": 100}, "mass_density", "mass density factor",
         "auc_vs_mass_density.svg"),
        ({"mass_size": 7.0, "mass_density": 1.06}, "dose", "relative dose (%)", "auc_vs_dose.svg"),
    ]
    for fixed, xkey, xlabel, name in specs:
        series = collect(fixed, xkey)
        if series:
            title = ", ".join(f"{k} {v}" for k, v in fixed.items())
            paths.append(_plot_lines(series, xlabel, title, out_dir / name))
    dens = sorted((s for s in ok if s["mass_size"] == 7.0 and s["mass_density"] == 1.06
                   and s["dose"] == 100), key=lambda s: CLASS_ORDER.index(s["breast_density"]))
    if len(dens) > 1:
        series = {"7 mm, 1.06": [(i, s["auc"], s["ci_lo"], s["ci_hi"]) for i, s in enumerate(dens)]}
        paths.append(_plot_lines(series, "breast density", "mass radius 7 mm, density 1.06, dose 100",
                                 out_dir / "auc_vs_breast_density.svg",
                                 xticks=[s["breast_density"] for s in dens]))
    return paths


def write_results(manifest, out_dir, plots: bool = True) -> list:
    """Write results/auc.csv, results/timing.csv and plots; returns manifest file entries.

    The timing table holds wall-clock values, so it is listed without a
    checksum and flagged volatile.
    """
    from .sweep import sha256_file

    out_dir = Path(out_dir)
    res = out_dir / "results"
    written = [write_csv(results_table(manifest), RESULT_COLUMNS, res / "auc.csv")]
    if plots:
        written += trend_plots(manifest, res / "plots")
    entries = [{"path": p.relative_to(out_dir).as_posix(), "sha256": sha256_file(p)} for p in written]
    t = write_csv(timing_report(manifest), TIMING_COLUMNS, res / "timing.csv")
    entries.append({"path": t.relative_to(out_dir).as_posix(), "sha256": None, "volatile": True})
    return entries
