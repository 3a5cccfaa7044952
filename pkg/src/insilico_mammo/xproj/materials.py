"""Attenuation tables, form factors and x-ray spectra.

Material files (``data/materials/<name>.txt``): comment header with
``# density_g_cm3: <rho>``, then rows ``energy_keV photo compton rayleigh``
in cm^2/g.  An absorption edge is two rows at the same energy, below then
above.  Form factor files (``<name>_ff.txt``): rows ``x f2`` with
x = sin(theta/2)/lambda in 1/Angstrom.

Spectrum file (``data/spectra_w.txt``): bin centres in keV followed by one
column per integer kVp (``kvp24`` ... ``kvp35``).
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from ..config import data_dir
from ..errors import ConfigurationError, FormatError
from ..phantom import Material

E_MIN, E_MAX = 5.0, 40.0
FINE_DE = 0.02
HC_KEV_A = 12.39842  # keV * Angstrom
LABEL_FILES = {Material.AIR: "air", Material.SKIN: "skin", Material.FAT: "fat",
               Material.GLAND: "gland", Material.MASS: "gland"}
N_LABELS = len(Material)
FF_POINTS = 2048


def _read_header(path: Path) -> dict:
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if ":" in body:
                k, v = body.split(":", 1)
                meta[k.strip()] = v.strip()
    return meta


@functools.lru_cache(maxsize=None)
def read_material(path: str):
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"material table not found: {path}")
    meta = _read_header(path)
    try:
        rho = float(meta["density_g_cm3"])
    except KeyError:
        raise FormatError(f"{path}: missing density_g_cm3 header") from None
    rows = np.loadtxt(path, comments="#")
    if rows.ndim != 2 or rows.shape[1] != 4:
        raise FormatError(f"{path}: expected 4 columns")
    if np.any(np.diff(rows[:, 0]) < 0) or np.any(rows[:, 1:] <= 0):
        raise FormatError(f"{path}: energies must be sorted and coefficients positive")
    rows.setflags(write=False)
    return rho, rows


@functools.lru_cache(maxsize=None)
def read_form_factor(path: str):
    rows = np.loadtxt(path, comments="#")
    rows.setflags(write=False)
    return rows


def loglog_interp(e, table_e, table_v):
    """Log-log interpolation; at a duplicated edge energy the upper row wins."""
    e = np.asarray(e, dtype=float)
    j = np.searchsorted(table_e, e, side="right")
    j = np.clip(j, 1, len(table_e) - 1)
    i = j - 1
    e0, e1 = table_e[i], table_e[j]
    v0, v1 = table_v[i], table_v[j]
    same = e1 <= e0
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(same, 0.0, np.log(np.clip(e, e0, e1) / e0) / np.log(np.where(same, 2.0, e1 / e0)))
    return np.exp(np.log(v0) + f * (np.log(v1) - np.log(v0)))


def _ff_cdf(ff_rows, x2_grid):
    """Cumulative integral of F^2 over x^2, used to invert the Rayleigh angle."""
    f2 = np.interp(np.sqrt(x2_grid), ff_rows[:, 0], ff_rows[:, 1])
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (f2[1:] + f2[:-1]) * np.diff(x2_grid))])
    return cdf


@dataclass(frozen=True, eq=False)
class MaterialTable:
    """Linear attenuation (cm^-1) per label on a uniform fine energy grid."""

    energies: np.ndarray
    mu_photo: np.ndarray  # (labels, nE)
    mu_compton: np.ndarray
    mu_rayleigh: np.ndarray
    density: np.ndarray  # g/cm^3 per label
    ff_x2: np.ndarray  # (FF_POINTS,)
    ff_cdf: np.ndarray  # (labels, FF_POINTS)
    detector_mu_photo: np.ndarray  # selenium, cm^-1
    density_factor: float = 1.0

    @property
    def e0(self) -> float:
        return float(self.energies[0])

    @property
    def de(self) -> float:
        return float(self.energies[1] - self.energies[0])

    @property
    def mu_total(self) -> np.ndarray:
        return self.mu_photo + self.mu_compton + self.mu_rayleigh

    def at(self, label, energy_kev):
        """(photo, compton, rayleigh) linear coefficients at one energy."""
        e = np.asarray(energy_kev, dtype=float)
        return tuple(np.interp(e, self.energies, arr[int(label)])
                     for arr in (self.mu_photo, self.mu_compton, self.mu_rayleigh))

    def mu(self, label, energy_kev):
        return sum(self.at(label, energy_kev))

    @classmethod
    def load(cls, density_factor: float = 1.0, directory: Optional[Path] = None) -> "MaterialTable":
        return _load_cached(str(Path(directory or data_dir()) / "materials"), float(density_factor))

    def with_density_factor(self, density_factor: float) -> "MaterialTable":
        if density_factor <= 0:
            raise ConfigurationError("density factor must be positive")
        scale = density_factor / self.density_factor
        arrays = {}
        for name in ("mu_photo", "mu_compton", "mu_rayleigh"):
            a = getattr(self, name).copy()
            a[Material.MASS] *= scale
            arrays[name] = a
        dens = self.density.copy()
        dens[Material.MASS] *= scale
        return replace(self, density=dens, density_factor=float(density_factor), **arrays)

    @classmethod
    def constant(cls, mu: Mapping, ff_from: Optional["MaterialTable"] = None,
                 detector_mu_photo: Optional[float] = None) -> "MaterialTable":
        """Energy-independent table for analytic checks.

        ``mu`` maps labels to a total coefficient (treated as photoelectric)
        or to a (photo, compton, rayleigh) triple in cm^-1.  Unlisted labels
        are transparent.
        """
        base = ff_from or cls.load()
        n = len(base.energies)
        arrs = np.zeros((3, N_LABELS, n))
        for label, v in mu.items():
            comp = (float(v), 0.0, 0.0) if np.isscalar(v) else tuple(float(c) for c in v)
            if len(comp) != 3 or min(comp) < 0:
                raise ConfigurationError(f"bad coefficients for {label}: {v}")
            arrs[:, int(label), :] = np.asarray(comp)[:, None]
        det = base.detector_mu_photo if detector_mu_photo is None else np.full(n, float(detector_mu_photo))
        return replace(base, mu_photo=arrs[0], mu_compton=arrs[1], mu_rayleigh=arrs[2],
                       density=np.ones(N_LABELS), detector_mu_photo=det, density_factor=1.0)


@functools.lru_cache(maxsize=8)
def _load_cached(mat_dir: str, density_factor: float) -> MaterialTable:
    mat_dir = Path(mat_dir)
    energies = np.round(np.arange(E_MIN, E_MAX + FINE_DE / 2, FINE_DE), 10)
    arrs = np.zeros((3, N_LABELS, len(energies)))
    dens = np.zeros(N_LABELS)
    x2max = 3.5**2
    x2 = np.linspace(0.0, x2max, FF_POINTS)
    cdf = np.zeros((N_LABELS, FF_POINTS))
    for label, name in LABEL_FILES.items():
        rho, rows = read_material(str(mat_dir / f"{name}.txt"))
        if label == Material.MASS:
            rho = rho * density_factor
        dens[label] = rho
        for c in range(3):
            arrs[c, label] = rho * loglog_interp(energies, rows[:, 0], rows[:, c + 1])
        cdf[label] = _ff_cdf(read_form_factor(str(mat_dir / f"{name}_ff.txt")), x2)
    rho_se, se = read_material(str(mat_dir / "selenium.txt"))
    det = rho_se * loglog_interp(energies, se[:, 0], se[:, 1])
    return MaterialTable(energies, arrs[0], arrs[1], arrs[2], dens, x2, cdf, det, density_factor)


# -- spectra ------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def read_spectra(path: str):
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"spectrum table not found: {path}")
    header = None
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                header = line[1:].split()
            else:
                break
    rows = np.loadtxt(path, comments="#")
    if header is None or len(header) != rows.shape[1]:
        raise FormatError(f"{path}: column header missing or inconsistent")
    kvps = [int(h[3:]) for h in header[1:]]
    return rows[:, 0].copy(), {k: rows[:, i + 1].copy() for i, k in enumerate(kvps)}


@dataclass(frozen=True, eq=False)
class Spectrum:
    energies: np.ndarray  # bin centres, keV
    fluence: np.ndarray  # sums to 1
    kvp: float
    bin_width: float = 0.5
    anode: str = "W"
    filter_material: str = "Rh"
    filter_um: float = 0.0

    def __post_init__(self):
        if np.any(self.fluence < 0) or not np.isclose(self.fluence.sum(), 1.0):
            raise ConfigurationError("spectrum fluence must be non-negative and sum to 1")

    @property
    def mean_energy(self) -> float:
        return float(np.dot(self.energies, self.fluence))

    @classmethod
    def monoenergetic(cls, energy_kev: float) -> "Spectrum":
        if not E_MIN <= energy_kev <= E_MAX:
            raise ConfigurationError(f"energy {energy_kev} keV outside table range")
        return cls(np.array([float(energy_kev)]), np.array([1.0]), float(energy_kev),
                   bin_width=0.0, anode="mono", filter_material="none", filter_um=0.0)


def build_spectrum(kvp: float, filter_um: float = 50.0, directory: Optional[Path] = None) -> Spectrum:
    if filter_um < 0:
        raise ConfigurationError("filter thickness must be non-negative")
    centres, columns = read_spectra(str(Path(directory or data_dir()) / "spectra_w.txt"))
    if int(kvp) != kvp or int(kvp) not in columns:
        raise ConfigurationError(
            f"kVp {kvp} outside spectrum table ({min(columns)}-{max(columns)} kV)")
    kvp = int(kvp)
    width = float(centres[1] - centres[0])
    keep = centres + width / 2 <= kvp + 1e-9
    e = centres[keep]
    flu = columns[kvp][keep].astype(float)
    if filter_um > 0:
        rho, rows = read_material(str(Path(directory or data_dir()) / "materials" / "rhodium.txt"))
        mu = rho * loglog_interp(e, rows[:, 0], rows[:, 1:].sum(axis=1))
        flu = flu * np.exp(-mu * filter_um * 1e-4)
    flu = np.clip(flu, 0, None)
    flu = flu / flu.sum()
    return Spectrum(e, flu, float(kvp), width, "W", "Rh", float(filter_um))


def bin_energy_range(spec: Spectrum):
    return float(spec.energies.min() - spec.bin_width / 2), float(spec.energies.max() + spec.bin_width / 2)


def _check_range(spec: Spectrum):
    lo, hi = bin_energy_range(spec)
    if lo < E_MIN - 1e-9 or hi > E_MAX + 1e-9:
        raise ConfigurationError(f"spectrum spans {lo}-{hi} keV, tables cover {E_MIN}-{E_MAX}")
