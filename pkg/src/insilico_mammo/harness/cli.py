"""Command line entry point: generate, project, evaluate, sweep, moments, report."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .. import __version__
from ..compress import CompressionSpec, compress
from ..config import DensityClass, default_table, set_default_table
from ..errors import InsilicoError
from ..lesion import generate_mass, place_mass
from ..phantom import PhantomParams, VoxelPhantom, derive_seed, generate_phantom
from ..reader import image_moments, mrmc_bootstrap, read_scores_csv
from ..xproj import AcquisitionConfig, ScatterMode, simulate_projection
from .locfile import read_loc, write_loc
from .mhd import read_mhd_raw, write_mhd_raw

log = logging.getLogger("insilico_mammo")


# -- phantom files -------------------------------------------------------------

def save_phantom(ph: VoxelPhantom, path) -> list:
    extra = {"DensityClass": ph.density_class.value, "Seed": ph.seed,
             "OriginMM": " ".join(repr(float(v)) for v in ph.origin_mm),
             "ThicknessMM": repr(float(ph.thickness_mm)),
             "GlandularFraction": repr(float(ph.glandular_fraction_achieved)),
             "Compressed": str(bool(ph.compressed))}
    mhd, raw = write_mhd_raw(ph.labels, path, spacing=(ph.pitch,) * 3, extra=extra)
    out = [mhd, raw]
    if ph.lesion is not None:
        out.append(write_loc(ph.lesion, mhd.with_suffix(".loc")))
    return out


def load_phantom(path) -> VoxelPhantom:
    labels, h = read_mhd_raw(path)
    lesion = None
    loc = Path(path).with_suffix(".loc")
    if loc.exists():
        lesion, _ = read_loc(loc)
    return VoxelPhantom(
        labels=np.ascontiguousarray(labels, dtype=np.uint8),
        pitch=float(h["ElementSpacing"].split()[0]),
        density_class=DensityClass.parse(h["DensityClass"]),
        seed=int(h["Seed"]),
        glandular_fraction_achieved=float(h["GlandularFraction"]),
        thickness_mm=float(h["ThicknessMM"]),
        origin_mm=tuple(float(v) for v in h["OriginMM"].split()),
        lesion=lesion, signal_present=lesion is not None,
        compressed=h.get("Compressed") == "True")


def build_case(args):
    dc = DensityClass.parse(args.density_class)
    ph = generate_phantom(PhantomParams.defaults(dc, seed=args.seed))
    if args.mass_radius:
        mass = generate_mass(args.mass_radius, derive_seed(args.seed, 1),
                             density_factor=args.density_factor)
        ph, _ = place_mass(ph, mass, np.random.default_rng(derive_seed(args.seed, 2)))
    if not getattr(args, "no_compress", False):
        ph = compress(ph, CompressionSpec.for_class(dc))
    return ph


# -- verbs ----------------------------------------------------------------------

def cmd_generate(args):
    ph = build_case(args)
    out = Path(args.out or ".")
    files = save_phantom(ph, out / "phantom.mhd")
    counts = {m.name.lower(): n for m, n in ph.counts().items()}
    print(json.dumps({"files": [str(f) for f in files], "dims": ph.dims, "counts": counts,
                      "glandular_fraction": ph.glandular_fraction_achieved,
                      "thickness_mm": ph.thickness_mm}, indent=1))


def cmd_project(args):
    if args.phantom:
        ph = load_phantom(args.phantom)
        if not ph.compressed:
            ph = compress(ph, CompressionSpec.for_class(ph.density_class))
    else:
        ph = build_case(args)
    kw = {"scatter_mode": ScatterMode(args.scatter_mode), "seed": derive_seed(args.seed, 100)}
    if args.no_grid:
        from ..xproj import GridSpec
        kw["grid"] = GridSpec(enabled=False)
    cfg = AcquisitionConfig.for_class(ph.density_class, args.dose, dose_scale=args.dose_scale, **kw)
    proj = simulate_projection(ph, cfg, threads=args.threads)
    out = Path(args.out or ".")
    extra = {"Histories": cfg.histories, "DoseScale": repr(float(cfg.dose_scale)), "Units": "keV"}
    files = list(write_mhd_raw(proj.pixels.astype(np.float32), out / "projection_DM1.mhd",
                               extra=extra))
    if ph.lesion is not None:
        files.append(write_loc(ph.lesion, out / "projection_DM1.loc", proj.lesion_px))
    summary = {"files": [str(f) for f in files], "histories": cfg.histories,
               "tallies": proj.tallies, "mgd_mGy": proj.mean_glandular_dose_estimate,
               "lesion_px": proj.lesion_px}
    print(json.dumps(summary, indent=1, default=float))


def cmd_evaluate(args):
    rows = []
    for path in args.scores:
        study = read_scores_csv(path)
        r = study.analyse()
        row = {"file": str(path), "readers": len(study.reader_ids), "cases": len(study.case_ids),
               "auc": r.auc, "ci": list(r.ci), "variance": r.variance, "method": r.method,
               "reader_aucs": list(r.reader_aucs)}
        if args.bootstrap:
            row["bootstrap_variance"], _ = mrmc_bootstrap(study.scores, study.labels,
                                                          n_boot=args.bootstrap, seed=args.seed)
        rows.append(row)
    print(json.dumps(rows, indent=1))


def _images(paths):
    for p in map(Path, paths):
        if p.is_dir():
            yield from sorted(p.rglob("*.mhd"))
        else:
            yield p


def cmd_moments(args):
    names = ("mean", "variance", "skewness", "kurtosis", "hyperskewness")
    lines = ["path," + ",".join(names)]
    for p in _images(args.images):
        a, _ = read_mhd_raw(p)
        m = image_moments(a)
        lines.append(f"{p}," + ",".join(repr(float(v)) for v in m))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)


def cmd_sweep(args):
    from .sweep import SweepGrid, run_sweep

    kw = dict(base_seed=args.seed, dose_scale=args.dose_scale, protocol=args.protocol,
              cohort=tuple(args.cohort), reader_seeds=tuple(range(1, args.readers + 1)),
              scatter_mode=args.scatter_mode)
    grid = SweepGrid.reduced(**kw) if args.grid_size == "reduced" else SweepGrid.full(**kw)
    m = run_sweep(grid, args.out or "sweep_out", threads=args.threads)
    print(json.dumps({"hash": m.hash, "cases": len(m.cases), "errors": m.error_count,
                      "studies": [{k: s.get(k) for k in ("point", "auc", "ci_lo", "ci_hi", "status")}
                                  for s in m.studies]}, indent=1))
    return 0 if m.complete else 1


def cmd_report(args):
    from .report import per_case_minutes, timing_report, write_results
    from .sweep import MANIFEST_NAME, RunManifest

    root = Path(args.manifest)
    m = RunManifest.load(root / MANIFEST_NAME if root.is_dir() else root)
    out = Path(args.out) if args.out else (root if root.is_dir() else root.parent)
    write_results(m, out)
    for r in timing_report(m):
        print(f"{r['breast_density']:10s} {r['mass_size']:4.1f} {r['stage']:12s} "
              f"{r['n_cases']:5d} {r['mean_minutes']:.4f} min")
    print("per-case minutes:", json.dumps(per_case_minutes(m)))


# -- parser -----------------------------------------------------------------------

def _case_flags(p):
    p.add_argument("--class", dest="density_class", default="fatty",
                   choices=[d.value for d in DensityClass])
    p.add_argument("--mass-radius", type=float, default=0.0, help="mm; 0 for no lesion")
    p.add_argument("--density-factor", type=float, default=1.06)
    p.add_argument("--no-compress", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="class table replacing data/classes.cfg")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--dose-scale", type=float, default=None,
                        help="divide full-scale history counts by this (default from config)")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", help="output directory (file for moments)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="insilico-mammo", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("generate", parents=[common], help="phantom (+ mass, compression) to MHD")
    _case_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("project", parents=[common], help="simulate one projection")
    _case_flags(p)
    p.add_argument("--phantom", help="phantom .mhd from 'generate' instead of building one")
    p.add_argument("--dose", type=int, default=100, help="relative dose in percent")
    p.add_argument("--scatter-mode", default="PrimaryOnly", choices=[m.value for m in ScatterMode])
    p.add_argument("--no-grid", action="store_true")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("evaluate", parents=[common], help="MRMC AUC for score CSV files")
    p.add_argument("scores", nargs="+")
    p.add_argument("--bootstrap", type=int, default=0, help="bootstrap replicates for a cross-check")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common], help="run a parameter-grid sweep")
    p.add_argument("--grid-size", choices=("reduced", "full"), default="reduced")
    p.add_argument("--cohort", type=int, nargs=3, default=(100, 25, 25), metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--readers", type=int, default=3)
    p.add_argument("--protocol", choices=("matched", "fixed_train"), default="matched")
    p.add_argument("--scatter-mode", default="PrimaryOnly", choices=[m.value for m in ScatterMode])
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("moments", parents=[common], help="pixel moments of MHD images")
    p.add_argument("images", nargs="+", help=".mhd files or directories")
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("report", parents=[common], help="rebuild results and timing from a manifest")
    p.add_argument("manifest", help="sweep directory or manifest.json")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        table = set_default_table(args.config) if args.config else default_table()
        if args.dose_scale is None:
            args.dose_scale = table.dose_scale
        return int(args.func(args) or 0)
    except (InsilicoError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
