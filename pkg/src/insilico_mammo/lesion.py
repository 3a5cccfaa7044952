"""Spiculated mass synthesis and insertion."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .config import default_table
from .errors import ConfigurationError, DoesNotFitError, GenerationError, ResolutionError
from .phantom import SIX, Material, VoxelPhantom, candidate_sites

DEFAULT_MARGIN_MM = 5.0
MIN_HALF_WIDTH = 0.9  # voxels; thinner tubes break 6-connectivity along diagonals


@dataclass(frozen=True)
class MassParams:
    spicules: tuple[int, int] = (8, 16)  # inclusive range, 12 +- 4
    length: tuple[float, float] = (1.0, 2.0)  # x radius
    base_width: tuple[float, float] = (0.12, 0.25)  # x radius, full width at the core
    radial_noise: tuple[float, float] = (-0.15, 0.2)  # clip range, x radius
    lobes: int = 6
    volume_bounds: tuple[float, float] = (0.8, 2.5)
    max_attempts: int = 8


@dataclass(frozen=True, eq=False)
class MassModel:
    nominal_radius: float
    density_factor: float
    mask: np.ndarray  # odd-sized cube, mass centre at the middle voxel
    seed: int
    pitch: float
    n_spicules: int = 0

    def __post_init__(self):
        self.mask.setflags(write=False)

    @property
    def half(self) -> int:
        return self.mask.shape[0] // 2

    @property
    def voxel_count(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def volume_mm3(self) -> float:
        return self.voxel_count * self.pitch**3

    def reach_mm(self) -> float:
        """Largest distance from the centre to any mask voxel centre."""
        idx = np.argwhere(self.mask) - self.half
        return float(np.sqrt((idx**2).sum(axis=1).max()) * self.pitch)

    def with_density(self, density_factor: float) -> "MassModel":
        return MassModel(self.nominal_radius, float(density_factor), self.mask, self.seed,
                         self.pitch, self.n_spicules)


@dataclass(frozen=True)
class LesionRecord:
    center: tuple[int, int, int]
    nominal_radius: float
    density_factor: float
    bounding_box: tuple[tuple[int, int, int], tuple[int, int, int]]  # inclusive lo, exclusive hi
    mass_seed: int
    voxel_count: int = 0
    center_mm: Optional[tuple[float, float, float]] = None


def _random_units(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _draw_mask(radius_vox, rng, p: MassParams):
    n_sp = int(rng.integers(p.spicules[0], p.spicules[1] + 1))
    lengths = rng.uniform(*p.length, size=n_sp) * radius_vox
    widths = rng.uniform(*p.base_width, size=n_sp) * radius_vox
    dirs = _random_units(rng, n_sp)
    lobe_dirs = _random_units(rng, p.lobes)
    lobe_amp = rng.uniform(0.0, 0.08, size=p.lobes)
    lobe_freq = rng.integers(1, 4, size=p.lobes)
    lobe_phase = rng.uniform(0, 2 * np.pi, size=p.lobes)

    half = int(math.ceil(p.length[1] * radius_vox)) + 2
    ax = np.arange(-half, half + 1, dtype=float)
    g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)
    r = np.linalg.norm(g, axis=-1)
    u = g / np.maximum(r, 1e-12)[..., None]

    pert = np.zeros(r.shape)
    for k in range(p.lobes):
        pert += lobe_amp[k] * np.cos(np.pi * lobe_freq[k] * (u @ lobe_dirs[k]) + lobe_phase[k])
    pert = np.clip(pert, *p.radial_noise)
    mask = r <= radius_vox * (1.0 + pert)

    for d, L, w in zip(dirs, lengths, widths):
        s = g @ d
        perp = np.sqrt(np.maximum(r**2 - s**2, 0.0))
        halfw = np.maximum(0.5 * w * (1.0 - s / L), MIN_HALF_WIDTH)
        mask |= (s >= 0) & (s <= L) & (perp <= halfw)

    lab, _ = ndimage.label(mask, structure=SIX)
    mask = lab == lab[half, half, half]
    return mask, n_sp


def generate_mass(radius_mm: float, seed: int, pitch: float = 1.0, density_factor: float = 1.0,
                  params: MassParams = MassParams()) -> MassModel:
    if not radius_mm > 0 or not pitch > 0:
        raise ConfigurationError("radius and pitch must be positive")
    radius_vox = radius_mm / pitch
    if radius_vox < 2.0:
        raise ResolutionError(
            f"mass radius {radius_mm} mm is {radius_vox:.2f} voxels at pitch {pitch} mm (need >= 2)")
    nominal = 4.0 / 3.0 * math.pi * radius_vox**3
    lo, hi = params.volume_bounds
    for attempt in range(params.max_attempts):
        rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, attempt])
        mask, n_sp = _draw_mask(radius_vox, rng, params)
        if lo <= mask.sum() / nominal <= hi:
            return MassModel(float(radius_mm), float(density_factor), mask, int(seed),
                             float(pitch), n_sp)
    raise GenerationError(f"mass volume outside [{lo}, {hi}] after {params.max_attempts} attempts")


def _class_envelope(phantom: VoxelPhantom, table=None) -> float:
    table = table or default_table()
    return table[phantom.density_class].max_mass_radius_mm


def insert_mass(phantom: VoxelPhantom, mass: MassModel, site, table=None):
    """Relabel the mask voxels around ``site`` as Mass.

    Returns ``(new_phantom, record)``.  The input phantom is left untouched.
    """
    if phantom.lesion is not None:
        raise ConfigurationError("phantom already carries a lesion")
    if abs(mass.pitch - phantom.pitch) > 1e-9:
        raise ConfigurationError(f"mass pitch {mass.pitch} != phantom pitch {phantom.pitch}")
    limit = _class_envelope(phantom, table)
    if mass.nominal_radius > limit:
        raise DoesNotFitError(
            f"{mass.nominal_radius} mm mass exceeds the {phantom.density_class.value} "
            f"breast envelope ({limit} mm)")
    site = tuple(int(v) for v in site)
    h = mass.half
    offsets = np.argwhere(mass.mask) - h
    idx = offsets + np.asarray(site)
    shape = np.asarray(phantom.dims)
    if np.any(idx < 0) or np.any(idx >= shape):
        raise DoesNotFitError(f"mass at {site} extends past the volume")
    ii = tuple(idx.T)
    under = phantom.labels[ii]
    if np.any((under == Material.AIR) | (under == Material.SKIN)):
        raise DoesNotFitError(f"mass at {site} would overwrite Air/Skin voxels")
    labels = phantom.labels.copy()
    labels[ii] = Material.MASS
    lo = tuple(int(v) for v in idx.min(axis=0))
    hi = tuple(int(v) + 1 for v in idx.max(axis=0))
    record = LesionRecord(
        center=site,
        nominal_radius=mass.nominal_radius,
        density_factor=mass.density_factor,
        bounding_box=(lo, hi),
        mass_seed=mass.seed,
        voxel_count=len(offsets),
        center_mm=tuple(float(v) for v in phantom.voxel_center_mm(site)),
    )
    return phantom.evolve(labels=labels, lesion=record, signal_present=True), record


def place_mass(phantom: VoxelPhantom, mass: MassModel, rng: np.random.Generator,
               margin_mm: float = DEFAULT_MARGIN_MM, table=None):
    """Pick a candidate site with the case RNG and insert.

    Sites deep enough for the whole mask are preferred; otherwise the
    ordinary candidate list is tried in shuffled order.
    """
    limit = _class_envelope(phantom, table)
    if mass.nominal_radius > limit:
        raise DoesNotFitError(
            f"{mass.nominal_radius} mm mass exceeds the {phantom.density_class.value} "
            f"breast envelope ({limit} mm)")
    deep = candidate_sites(phantom, max(margin_mm, mass.reach_mm() + phantom.pitch))
    if len(deep):
        site = deep[int(rng.integers(len(deep)))]
        return insert_mass(phantom, mass, site, table)
    sites = candidate_sites(phantom, margin_mm)
    for k in rng.permutation(len(sites)):
        try:
            return insert_mass(phantom, mass, sites[k], table)
        except DoesNotFitError:
            continue
    raise DoesNotFitError(f"no candidate site accommodates the {mass.nominal_radius} mm mass")
