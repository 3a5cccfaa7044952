"""Parameter-grid sweeps: cohorts -> projections on disk -> reader studies.

Every case of a grid point is identified by its file id (1..N, odd ids
carry a lesion).  Seeds are derived from (base seed, class, id), so the
same phantom is used for a given id at every grid point of a class and
mass sites and projection noise are shared across mass densities: grid
points differ only in the factor being swept.  Negative cases do not
depend on mass size or density, so their projections are computed once
per (class, id, dose) and written to every grid point that uses them.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..compress import CompressionSpec, compress
from ..config import DensityClass, default_table
from ..errors import ConfigurationError, InsilicoError
from ..lesion import generate_mass, place_mass
from ..phantom import PhantomParams, derive_seed, generate_phantom
from ..reader import (CaseSet, ReaderStudy, channel_bank, channel_responses, prepare_image,
                      train_reader, score_cases, write_scores_csv)
from ..xproj import AcquisitionConfig, ScatterMode, simulate_projection
from .layout import IMAGE_STEM, GridPoint, layout_path, lesion_present
from .locfile import write_loc
from .mhd import write_mhd_raw

log = logging.getLogger(__name__)

PROTOCOLS = ("matched", "fixed_train")
STAGES = ("phantom", "insertion", "compression", "projection")
REFERENCE = (7.0, 1.06, 100)  # training point of the fixed_train protocol
MANIFEST_NAME = "manifest.json"


class SweepIOError(InsilicoError, OSError):
    """Writing sweep output failed; ``manifest`` holds what was written."""

    def __init__(self, message, manifest=None):
        super().__init__(message)
        self.manifest = manifest


@dataclass(frozen=True)
class SweepGrid:
    densities: tuple = tuple(DensityClass)
    mass_radii: tuple = (5.0, 7.0, 9.0)
    density_factors: tuple = (1.0, 1.06, 1.1)
    relative_doses: tuple = (20, 40, 60, 80, 100)
    cohort: tuple = (100, 25, 25)  # train, val, test
    dose_scale: float = 1e4
    base_seed: int = 0
    reader_seeds: tuple = (1, 2, 3)
    protocol: str = "matched"
    scatter_mode: str = ScatterMode.PRIMARY_ONLY.value
    explicit_points: Optional[tuple] = None  # overrides the cartesian product

    @classmethod
    def full(cls, **kw) -> "SweepGrid":
        return cls(**kw)

    @classmethod
    def reduced(cls, **kw) -> "SweepGrid":
        """Size and density-factor lines for Fatty and Scattered at 100 % dose,
        Dense at the matched point, and the Fatty dose ladder."""
        F, S, D = DensityClass.FATTY, DensityClass.SCATTERED, DensityClass.DENSE
        pts = []
        for dc in (F, S):
            pts += [GridPoint(dc, r, 1.06, 100) for r in (5.0, 7.0, 9.0)]
            pts += [GridPoint(dc, 7.0, df, 100) for df in (1.0, 1.1)]
        pts.append(GridPoint(D, 7.0, 1.06, 100))
        pts += [GridPoint(F, 7.0, 1.06, d) for d in (20, 40, 60, 80)]
        return cls(explicit_points=tuple(pts), **kw)

    @property
    def cohort_size(self) -> int:
        return int(sum(self.cohort))

    def points(self, table=None) -> list:
        """Grid points, sorted, with masses that cannot fit pruned."""
        table = table or default_table()
        if self.explicit_points is not None:
            cand = set(self.explicit_points)
        else:
            cand = {GridPoint(DensityClass.parse(dc), float(r), float(df), int(d))
                    for dc in self.densities for r in self.mass_radii
                    for df in self.density_factors for d in self.relative_doses}
        pts = sorted(p for p in cand
                     if p.mass_radius <= table[p.density_class].max_mass_radius_mm)
        return pts

    def validate(self, table=None):
        if self.protocol not in PROTOCOLS:
            raise ConfigurationError(f"protocol must be one of {PROTOCOLS}")
        if len(self.cohort) != 3 or min(self.cohort) < 4:
            raise ConfigurationError("cohort needs train/val/test sizes of at least 4")
        if len(self.reader_seeds) < 2 or len(set(self.reader_seeds)) != len(self.reader_seeds):
            raise ConfigurationError("at least two distinct reader seeds are needed")
        if self.dose_scale < 1:
            raise ConfigurationError("dose scale must be >= 1")
        pts = self.points(table)
        if not pts:
            raise ConfigurationError("sweep grid is empty after pruning")
        if self.protocol == "fixed_train":
            for dc in {p.density_class for p in pts}:
                if GridPoint(dc, *REFERENCE) not in pts:
                    raise ConfigurationError(f"fixed_train needs the point {dc.value} {REFERENCE}")
        return pts

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("mass_radii", "density_factors", "relative_doses",
                                          "cohort", "dose_scale", "base_seed", "reader_seeds",
                                          "protocol", "scatter_mode")}
        d["densities"] = [DensityClass.parse(x).value for x in self.densities]
        d["points"] = [p.key() for p in self.points()]
        return json.loads(json.dumps(d))


# -- cohort bookkeeping ------------------------------------------------------

def split_of(case_id: int, cohort) -> str:
    """Stratified split: each split gets ceil(n/2) positives, except the last
    which takes the remainder."""
    ntr, nva, _ = cohort
    pos = lesion_present(case_id)
    if pos:
        rank = (case_id - 1) // 2
        bounds = (math.ceil(ntr / 2), math.ceil(ntr / 2) + math.ceil(nva / 2))
    else:
        rank = (case_id - 2) // 2
        bounds = (ntr // 2, ntr // 2 + nva // 2)
    return "train" if rank < bounds[0] else "val" if rank < bounds[1] else "test"


def case_seeds(grid: SweepGrid, point: GridPoint, case_id: int) -> dict:
    cls_idx = list(DensityClass).index(point.density_class)
    phantom = derive_seed(derive_seed(grid.base_seed, cls_idx), case_id)
    tag = int(round(point.mass_radius * 10))
    return {"phantom": phantom,
            "mass": derive_seed(phantom, 1000 + tag) if lesion_present(case_id) else None,
            "site": derive_seed(phantom, 2000 + tag) if lesion_present(case_id) else None,
            "projection": derive_seed(phantom, 100000 + int(point.relative_dose))}


def subgroup(point: GridPoint) -> dict:
    return {"breast_density": point.density_class.value, "mass_size": float(point.mass_radius),
            "mass_density": float(point.density_factor), "dose": int(point.relative_dose)}


# -- one case ----------------------------------------------------------------

@dataclass
class CaseResult:
    pixels: Optional[np.ndarray] = None  # float32, as written to disk
    features: Optional[np.ndarray] = None
    lesion: object = None
    lesion_px: object = None
    timings: dict = field(default_factory=dict)
    error: Optional[dict] = None


def simulate_case(grid: SweepGrid, point: GridPoint, case_id: int, table=None, bank=None,
                  fault: Optional[Callable] = None) -> CaseResult:
    """Phantom -> (insertion) -> compression -> projection -> reader features.

    Stage failures are returned in ``error`` rather than raised.
    """
    table = table or default_table()
    seeds = case_seeds(grid, point, case_id)
    dc = point.density_class
    res = CaseResult()
    stage = "phantom"
    try:
        t = time.perf_counter()
        if fault:
            fault(point, case_id, stage)
        ph = generate_phantom(PhantomParams.defaults(dc, seed=seeds["phantom"], table=table))
        res.timings[stage] = time.perf_counter() - t
        if lesion_present(case_id):
            stage = "insertion"
            t = time.perf_counter()
            if fault:
                fault(point, case_id, stage)
            mass = generate_mass(point.mass_radius, seeds["mass"], pitch=ph.pitch,
                                 density_factor=point.density_factor)
            ph, _ = place_mass(ph, mass, np.random.default_rng(seeds["site"]), table=table)
            res.timings[stage] = time.perf_counter() - t
        stage = "compression"
        t = time.perf_counter()
        if fault:
            fault(point, case_id, stage)
        ph = compress(ph, CompressionSpec.for_class(dc, table))
        res.timings[stage] = time.perf_counter() - t
        res.lesion = ph.lesion
        stage = "projection"
        t = time.perf_counter()
        if fault:
            fault(point, case_id, stage)
        cfg = AcquisitionConfig.for_class(dc, point.relative_dose, dose_scale=grid.dose_scale,
                                          table=table, seed=seeds["projection"],
                                          scatter_mode=ScatterMode(grid.scatter_mode))
        proj = simulate_projection(ph, cfg)
        res.pixels = proj.pixels.astype(np.float32)
        res.lesion_px = proj.lesion_px
        res.timings[stage] = time.perf_counter() - t
        stage = "features"
        bank = channel_bank() if bank is None else bank
        res.features = channel_responses(prepare_image(res.pixels), bank).astype(np.float32)
    except (InsilicoError, ValueError, ArithmeticError) as exc:
        res.error = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
        res.pixels = res.features = None
    return res


# -- manifest ----------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    grid: dict
    cases: list = field(default_factory=list)  # dicts, one per (point, case id)
    studies: list = field(default_factory=list)  # per grid point AUC summaries
    files: list = field(default_factory=list)  # results files outside the case tree
    complete: bool = False
    hash: Optional[str] = None

    @property
    def errors(self) -> list:
        return [c for c in self.cases if c.get("error")]

    @property
    def error_count(self) -> int:
        return len(self.errors)

    def all_files(self) -> list:
        out = [f for c in self.cases for f in c["files"]]
        return out + list(self.files)

    def content(self) -> dict:
        """Everything except wall-clock fields."""
        cases = [{k: v for k, v in c.items() if k != "timings"} for c in self.cases]
        return {"grid": self.grid, "cases": cases, "studies": self.studies,
                "files": self.files, "complete": self.complete}

    def compute_hash(self) -> str:
        blob = json.dumps(self.content(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_dict(self) -> dict:
        d = self.content()
        d["cases"] = self.cases
        d["hash"] = self.hash
        d["error_count"] = self.error_count
        return d

    def save(self, path) -> Path:
        self.hash = self.compute_hash()
        path = Path(path)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        d = json.loads(Path(path).read_text())
        return cls(grid=d["grid"], cases=d["cases"], studies=d["studies"], files=d["files"],
                   complete=d["complete"], hash=d.get("hash"))


# -- sweep -------------------------------------------------------------------

def _write_case(out: Path, point, case_id, res: CaseResult, grid, table) -> list:
    rel = layout_path(point, case_id, table)
    d = out / rel
    extra = {"Histories": AcquisitionConfig.for_class(point.density_class, point.relative_dose,
                                                      dose_scale=grid.dose_scale,
                                                      table=table).histories,
             "DoseScale": repr(float(grid.dose_scale)), "Units": "keV"}
    mhd, raw = write_mhd_raw(res.pixels, d / f"{IMAGE_STEM}.mhd", spacing=(1.0, 1.0), extra=extra)
    paths = [mhd, raw]
    if res.lesion is not None:
        paths.append(write_loc(res.lesion, d / f"{IMAGE_STEM}.loc", res.lesion_px))
    return [{"path": p.relative_to(out).as_posix(), "sha256": sha256_file(p)} for p in paths]


def _study_rows(point, study_auc, n_test, status, protocol):
    row = {"point": point.key(), **subgroup(point), "protocol": protocol, "status": status,
           "n_test": n_test}
    if study_auc is not None:
        r = study_auc
        row.update(auc=r.auc, ci_lo=r.ci[0], ci_hi=r.ci[1], half_width=r.half_width,
                   variance=r.variance, reader_aucs=list(r.reader_aucs), method=r.method)
    return row


def _caseset(items, split):
    ids = [i for i, _, _ in items]
    return CaseSet(images=None, labels=[int(lesion_present(i)) for i in ids], split=split,
                   case_ids=ids, metadata=[m for _, _, m in items],
                   features=np.stack([f for _, f, _ in items]) if items else None)


def run_sweep(grid: SweepGrid, out_dir, threads: int = 1, table=None,
              fault: Optional[Callable] = None, train_kw: Optional[dict] = None,
              plots: bool = True) -> RunManifest:
    """Run every grid point and write data, scores, results and manifest.

    ``fault(point, case_id, stage)`` may raise to inject a stage failure.
    """
    from .report import write_results  # report imports sweep

    table = table or default_table()
    points = grid.validate(table)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SweepIOError(f"cannot create output directory {out}: {exc}") from exc
    manifest = RunManifest(grid=grid.to_dict())
    bank = channel_bank()
    neg_cache: dict = {}
    ref_readers: dict = {}
    train_kw = dict(train_kw or {})
    # reference point first within its class, then the rest of its dose level
    order = sorted(points, key=lambda p: (
        p.density_class.value, p.relative_dose != REFERENCE[2], p.relative_dose,
        (p.mass_radius, p.density_factor) != REFERENCE[:2], p))
    ids = list(range(1, grid.cohort_size + 1))

    def work(job):
        point, cid = job
        return simulate_case(grid, point, cid, table, bank, fault)

    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        for point in order:
            t0 = time.perf_counter()
            # drop cached negatives of other (class, dose) pairs
            for k in [k for k in neg_cache if k[:2] != (point.density_class, point.relative_dose)]:
                del neg_cache[k]
            todo = [(point, cid) for cid in ids
                    if lesion_present(cid) or (point.density_class, point.relative_dose, cid) not in neg_cache]
            fresh = dict(zip([c for _, c in todo], pool.map(work, todo)))
            per_split = {"train": [], "val": [], "test": []}
            for cid in ids:
                nk = (point.density_class, point.relative_dose, cid)
                reused = cid not in fresh
                res = neg_cache[nk] if reused else fresh[cid]
                if not lesion_present(cid) and not reused and res.error is None:
                    neg_cache[nk] = res
                entry = {"point": point.key(), "case_id": cid, "lesion": lesion_present(cid),
                         "split": split_of(cid, grid.cohort),
                         "seeds": case_seeds(grid, point, cid), "subgroup": subgroup(point),
                         "timings": {} if reused else res.timings, "reused": reused,
                         "files": [], "error": res.error}
                if res.error is None:
                    try:
                        entry["files"] = _write_case(out, point, cid, res, grid, table)
                    except OSError as exc:
                        manifest.cases.append(entry)
                        _save_partial(manifest, out)
                        raise SweepIOError(f"writing case {cid} of {point.key()}: {exc}",
                                           manifest) from exc
                    per_split[entry["split"]].append((cid, res.features, subgroup(point)))
                else:
                    log.warning("%s case %d failed at %s: %s", point.key(), cid,
                                res.error["stage"], res.error["message"])
                manifest.cases.append(entry)
            fresh.clear()
            manifest.studies.append(_evaluate_point(grid, point, per_split, ref_readers,
                                                    bank, out, manifest, train_kw))
            log.info("%s done in %.1f s", point.key(), time.perf_counter() - t0)
    manifest.studies.sort(key=lambda s: s["point"])
    try:
        manifest.files.sort(key=lambda f: f["path"])
        manifest.files += write_results(manifest, out, plots=plots)
        manifest.complete = True
        manifest.save(out / MANIFEST_NAME)
    except OSError as exc:
        _save_partial(manifest, out)
        raise SweepIOError(f"writing results: {exc}", manifest) from exc
    return manifest


def _save_partial(manifest, out):
    try:
        manifest.save(out / MANIFEST_NAME)
    except OSError:
        log.error("could not save partial manifest")


def _evaluate_point(grid, point, per_split, ref_readers, bank, out, manifest, train_kw):
    test = per_split["test"]
    try:
        te = _caseset(test, "test")
        if grid.protocol == "matched" or (point.mass_radius, point.density_factor,
                                          point.relative_dose) == REFERENCE:
            tr, va = _caseset(per_split["train"], "train"), _caseset(per_split["val"], "val")
            readers = [train_reader(tr, va, s, bank=bank, **train_kw) for s in grid.reader_seeds]
            if grid.protocol == "fixed_train":
                ref_readers[point.density_class] = readers
        else:
            readers = ref_readers[point.density_class]
        scores = np.stack([score_cases(r, te) for r in readers])
        study = ReaderStudy(scores, te.labels, list(grid.reader_seeds), list(te.case_ids),
                            list(te.metadata))
        result = study.analyse()
    except (InsilicoError, ValueError, KeyError) as exc:
        log.warning("%s: reader study failed: %s", point.key(), exc)
        return _study_rows(point, None, len(test), f"error: {type(exc).__name__}: {exc}",
                           grid.protocol)
    path = out / "results" / "scores" / f"{point.key()}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_scores_csv(study, path)
    manifest.files.append({"path": path.relative_to(out).as_posix(), "sha256": sha256_file(path)})
    return _study_rows(point, result, len(test), "ok", grid.protocol)
