"""Class-default table and data-file lookup.

The table is a plain key-value file (``data/classes.cfg``).  Set
``INSILICO_MAMMO_DATA`` to point at a directory holding replacement
``classes.cfg``, ``spectra_w.txt`` and ``materials/`` files.
"""
from __future__ import annotations

import configparser
import enum
import functools
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigurationError

DATA_ENV = "INSILICO_MAMMO_DATA"


class DensityClass(str, enum.Enum):
    DENSE = "dense"
    HETERO = "hetero"
    SCATTERED = "scattered"
    FATTY = "fatty"

    @classmethod
    def parse(cls, value) -> "DensityClass":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigurationError(f"unknown density class {value!r}") from None


def data_dir() -> Path:
    override = os.environ.get(DATA_ENV)
    if override:
        return Path(override)
    return Path(__file__).resolve().parent / "data"


@dataclass(frozen=True)
class ClassDefaults:
    density_class: DensityClass
    extent_mm: tuple[float, float, float]
    glandular_fraction: float
    compressed_cm: float
    kvp: int
    histories_100: int
    histories_source: str
    max_mass_radius_mm: float

    @property
    def volume_mm3(self) -> float:
        # half-ellipsoid: depth is the full semi-axis, width/thickness are diameters
        d, w, t = self.extent_mm
        return 2.0 / 3.0 * 3.141592653589793 * d * (w / 2) * (t / 2)


@dataclass(frozen=True)
class ClassTable:
    classes: dict
    voxel_pitch_mm: float
    dose_scale: float
    mass_radii_mm: tuple[float, ...]
    density_factors: tuple[float, ...]
    relative_doses: tuple[int, ...]

    def __getitem__(self, key) -> ClassDefaults:
        return self.classes[DensityClass.parse(key)]


def _floats(text):
    return tuple(float(v) for v in text.split())


def load_class_table(path=None) -> ClassTable:
    path = Path(path) if path is not None else data_dir() / "classes.cfg"
    if not path.exists():
        raise ConfigurationError(f"class table not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.read(path)
    g = parser["global"] if parser.has_section("global") else {}
    classes = {}
    for dc in DensityClass:
        if not parser.has_section(dc.value):
            raise ConfigurationError(f"class table {path} lacks section [{dc.value}]")
        s = parser[dc.value]
        extent = _floats(s["extent_mm"])
        if len(extent) != 3:
            raise ConfigurationError(f"[{dc.value}] extent_mm needs three values")
        classes[dc] = ClassDefaults(
            density_class=dc,
            extent_mm=extent,
            glandular_fraction=float(s["glandular_fraction"]),
            compressed_cm=float(s["compressed_cm"]),
            kvp=int(s["kvp"]),
            histories_100=int(float(s["histories_100"])),
            histories_source=s.get("histories_source", ""),
            max_mass_radius_mm=float(s.get("max_mass_radius_mm", "inf")),
        )
    return ClassTable(
        classes=classes,
        voxel_pitch_mm=float(g.get("voxel_pitch_mm", 1.0)),
        dose_scale=float(g.get("dose_scale", 1e4)),
        mass_radii_mm=_floats(g.get("mass_radii_mm", "5 7 9")),
        density_factors=_floats(g.get("density_factors", "1.0 1.06 1.1")),
        relative_doses=tuple(int(v) for v in _floats(g.get("relative_doses", "20 40 60 80 100"))),
    )


@functools.lru_cache(maxsize=None)
def _cached_default(key: str) -> ClassTable:
    return load_class_table(Path(key))


_override: list = []


def set_default_table(path=None) -> ClassTable:
    """Use ``path`` as the class table for the rest of the process (None resets)."""
    _override.clear()
    if path is not None:
        _override.append(load_class_table(path))
        return _override[0]
    return default_table()


def default_table() -> ClassTable:
    if _override:
        return _override[0]
    return _cached_default(str(data_dir() / "classes.cfg"))
