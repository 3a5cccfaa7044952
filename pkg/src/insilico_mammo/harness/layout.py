"""Dataset directory layout.

data/device_data_VICTREPhantoms_spic_<density factor>/<histories>/<class>/2/<size>/SIM/
    P2_<size>_<class>.8337609.<id>/<id>/

The histories folder holds the full-scale history count of the dose level
(``2.22e10``, ``4.44e09``); desk-scale runs keep the same names.  Odd ids
carry a lesion.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import PurePosixPath

from ..config import DensityClass, default_table
from ..errors import FormatError

NAMING_CONSTANT = "8337609"  # literal from the published layout; meaning not documented
IMAGE_STEM = "projection_DM1"


@dataclass(frozen=True, order=True)
class GridPoint:
    density_class: DensityClass
    mass_radius: float
    density_factor: float
    relative_dose: int

    def key(self) -> str:
        return (f"{self.density_class.value}_r{float(self.mass_radius)}"
                f"_d{float(self.density_factor)}_dose{int(self.relative_dose)}")


def dose_folder(point: GridPoint, table=None) -> str:
    table = table or default_table()
    h = table[point.density_class].histories_100 * int(point.relative_dose) // 100
    return f"{h:.2e}".replace("+", "")


def layout_path(point: GridPoint, case_id: int, table=None) -> PurePosixPath:
    if case_id < 0:
        raise FormatError("case id must be non-negative")
    size = str(float(point.mass_radius))
    cls = point.density_class.value
    return PurePosixPath(
        "data", f"device_data_VICTREPhantoms_spic_{float(point.density_factor)}",
        dose_folder(point, table), cls, "2", size, "SIM",
        f"P2_{size}_{cls}.{NAMING_CONSTANT}.{int(case_id)}", str(int(case_id)))


def lesion_present(case_id: int) -> bool:
    return int(case_id) % 2 == 1


_PATTERN = re.compile(
    r"(?:^|/)data/device_data_VICTREPhantoms_spic_(?P<df>[0-9.]+)/(?P<dose>[0-9.]+e-?\d+)/"
    r"(?P<cls>[a-z]+)/2/(?P<size>[0-9.]+)/SIM/P2_(?P<size2>[0-9.]+)_(?P<cls2>[a-z]+)\."
    + NAMING_CONSTANT + r"\.(?P<id>\d+)/(?P<id2>\d+)/?$")


def parse_layout(path, table=None):
    """Inverse of layout_path: returns (GridPoint, case_id, lesion_present)."""
    table = table or default_table()
    m = _PATTERN.search(str(PurePosixPath(path)))
    if not m or m["size"] != m["size2"] or m["cls"] != m["cls2"] or m["id"] != m["id2"]:
        raise FormatError(f"not a dataset case path: {path}")
    dc = DensityClass.parse(m["cls"])
    h = float(m["dose"])
    h100 = table[dc].histories_100
    dose = min(table.relative_doses, key=lambda d: abs(h100 * d / 100 - h))
    point = GridPoint(dc, float(m["size"]), float(m["df"]), int(dose))
    cid = int(m["id"])
    return point, cid, lesion_present(cid)
