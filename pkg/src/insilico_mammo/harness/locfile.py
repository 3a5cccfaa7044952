"""Single-line lesion location files.

Fields, space separated: centre voxel (3), bounding box lo (3) and hi (3,
exclusive), nominal radius mm, density factor, mass seed, voxel count,
centre in mm (3), image position in binned pixels (2).  Floats are
written with ``repr`` so a read returns identical values; ``nan`` marks
absent entries.
"""
from __future__ import annotations

import math
from pathlib import Path

from ..errors import FormatError
from ..lesion import LesionRecord

N_FIELDS = 18


def format_loc(record: LesionRecord, lesion_px=None) -> str:
    c = record.center
    lo, hi = record.bounding_box
    cmm = record.center_mm if record.center_mm is not None else (math.nan,) * 3
    px = lesion_px if lesion_px is not None else (math.nan, math.nan)
    vals = [*map(int, c), *map(int, lo), *map(int, hi)]
    parts = [str(v) for v in vals]
    parts += [repr(float(record.nominal_radius)), repr(float(record.density_factor)),
              str(int(record.mass_seed)), str(int(record.voxel_count))]
    parts += [repr(float(v)) for v in (*cmm, *px)]
    return " ".join(parts)


def parse_loc(line: str):
    parts = line.split()
    if len(parts) != N_FIELDS:
        raise FormatError(f"loc line has {len(parts)} fields, expected {N_FIELDS}")
    try:
        ints = [int(v) for v in parts[:9]]
        radius, df = float(parts[9]), float(parts[10])
        seed, count = int(parts[11]), int(parts[12])
        rest = [float(v) for v in parts[13:]]
    except ValueError as exc:
        raise FormatError(f"malformed loc line: {exc}") from None
    cmm = None if all(math.isnan(v) for v in rest[:3]) else tuple(rest[:3])
    px = None if all(math.isnan(v) for v in rest[3:]) else tuple(rest[3:])
    rec = LesionRecord(center=tuple(ints[:3]), nominal_radius=radius, density_factor=df,
                       bounding_box=(tuple(ints[3:6]), tuple(ints[6:9])), mass_seed=seed,
                       voxel_count=count, center_mm=cmm)
    return rec, px


def write_loc(record: LesionRecord, path, lesion_px=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_loc(record, lesion_px) + "\n")
    return path


def read_loc(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) != 1:
        raise FormatError(f"{path}: expected exactly one line")
    return parse_loc(lines[0])
