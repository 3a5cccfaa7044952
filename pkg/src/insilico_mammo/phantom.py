"""Procedural voxel breast phantoms and cohort sampling.

A phantom is a half-ellipsoid outline clipped at the chest-wall plane
(x = 0), filled with a two-tissue parenchyma obtained by thresholding
band-limited value noise, and wrapped in a skin shell.  The noise is
built from hashed integer lattice values and quantised to fixed point
before thresholding, so label grids are bit-identical across runs.

Coordinates: axis 0 runs from the chest wall to the nipple, axis 1 is
lateral and axis 2 is the craniocaudal (compression) axis.
"""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Mapping, Optional

import numpy as np
from scipy import ndimage

from .config import DensityClass, default_table
from .errors import ConfigurationError, GenerationError

MAX_VOXELS = 1 << 28
MARGIN = 2  # air voxels around the outline on every face
FIXED_POINT_BITS = 20

SIX = ndimage.generate_binary_structure(3, 1)


class Material(enum.IntEnum):
    AIR = 0
    SKIN = 1
    FAT = 2
    GLAND = 3
    MASS = 4


@dataclass(frozen=True)
class TextureParams:
    """Parenchyma texture knobs."""

    lattice_mm: float = 6.0
    octaves: int = 3
    persistence: float = 0.5
    central_bias: float = 0.3  # pulls gland towards the breast centre
    skin_mm: float = 1.5


@dataclass(frozen=True)
class PhantomParams:
    density_class: DensityClass
    target_glandular_fraction: float
    uncompressed_extent: tuple[float, float, float]
    voxel_pitch: float
    seed: int
    texture: TextureParams = TextureParams()

    @classmethod
    def defaults(cls, density_class, seed=0, voxel_pitch=None, table=None) -> "PhantomParams":
        table = table or default_table()
        row = table[density_class]
        return cls(
            density_class=row.density_class,
            target_glandular_fraction=row.glandular_fraction,
            uncompressed_extent=tuple(row.extent_mm),
            voxel_pitch=float(voxel_pitch or table.voxel_pitch_mm),
            seed=int(seed),
        )

    def grid_shape(self) -> tuple[int, int, int]:
        return tuple(int(math.ceil(e / self.voxel_pitch - 1e-9)) + 2 * MARGIN
                     for e in self.uncompressed_extent)

    def validate(self) -> None:
        if not self.voxel_pitch > 0:
            raise ConfigurationError(f"voxel_pitch must be positive, got {self.voxel_pitch}")
        if not 0.0 < self.target_glandular_fraction < 1.0:
            raise ConfigurationError(
                f"target_glandular_fraction must lie in (0, 1), got {self.target_glandular_fraction}")
        if len(self.uncompressed_extent) != 3 or min(self.uncompressed_extent) <= 0:
            raise ConfigurationError(f"bad extent {self.uncompressed_extent}")
        shape = self.grid_shape()
        if min(shape) < 16:
            raise ConfigurationError(f"grid {shape} smaller than 16 voxels along an axis")
        if math.prod(shape) > MAX_VOXELS:
            raise ConfigurationError(f"grid {shape} exceeds {MAX_VOXELS} voxels")


@dataclass(frozen=True, eq=False)
class VoxelPhantom:
    labels: np.ndarray
    pitch: float
    density_class: DensityClass
    seed: int
    glandular_fraction_achieved: float
    thickness_mm: float  # current CC thickness of the outline
    origin_mm: tuple[float, float, float]  # corner of voxel (0, 0, 0); z=0 is the breast underside
    lesion: Optional["LesionRecord"] = None  # noqa: F821
    params: Optional[PhantomParams] = None
    signal_present: bool = False
    case_index: Optional[int] = None
    compressed: bool = False
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        self.labels.setflags(write=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape

    def voxel_center_mm(self, index) -> np.ndarray:
        return np.asarray(self.origin_mm) + (np.asarray(index, dtype=float) + 0.5) * self.pitch

    def tissue_voxels(self) -> int:
        return int(np.count_nonzero(self.labels != Material.AIR))

    def counts(self) -> dict:
        hist = np.bincount(self.labels.ravel(), minlength=len(Material))
        return {m: int(hist[m]) for m in Material}

    def evolve(self, **changes) -> "VoxelPhantom":
        return replace(self, **changes)


# -- noise ------------------------------------------------------------------

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def _lattice_values(shape, seed: int, octave: int) -> np.ndarray:
    """Uniform values in [-1, 1) hashed from integer lattice coordinates."""
    with np.errstate(over="ignore"):
        ix, iy, iz = np.meshgrid(*(np.arange(n, dtype=np.uint64) for n in shape), indexing="ij")
        key = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GOLD * np.uint64(octave + 1))
        h = _mix64(key ^ _mix64(ix * np.uint64(73856093) + _GOLD))
        h = _mix64(h ^ (iy * np.uint64(19349663) + _GOLD))
        h = _mix64(h ^ (iz * np.uint64(83492791) + _GOLD))
    return (h >> np.uint64(11)).astype(np.float64) * (2.0 / 2.0**53) - 1.0


def _interp_axis(values: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
    i0 = np.floor(coords).astype(np.intp)
    f = coords - i0
    f = f * f * (3.0 - 2.0 * f)  # smoothstep fade
    shape = [1] * values.ndim
    shape[axis] = -1
    f = f.reshape(shape)
    a = np.take(values, i0, axis=axis)
    b = np.take(values, i0 + 1, axis=axis)
    return a + (b - a) * f


def value_noise(shape, pitch: float, seed: int, texture: TextureParams) -> np.ndarray:
    """Multi-octave value noise sampled at voxel centres, roughly in [-1, 1]."""
    total = np.zeros(shape)
    amp, norm = 1.0, 0.0
    for octave in range(texture.octaves):
        spacing = texture.lattice_mm / 2**octave
        coords = [(np.arange(n) + 0.5) * pitch / spacing for n in shape]
        lattice = _lattice_values([int(math.floor(c[-1])) + 2 for c in coords], seed, octave)
        v = lattice
        for axis, c in enumerate(coords):
            v = _interp_axis(v, c, axis)
        total += amp * v
        norm += amp
        amp *= texture.persistence
    return total / norm


# -- generation -------------------------------------------------------------

def _outline(params: PhantomParams):
    pitch = params.voxel_pitch
    d, w, t = params.uncompressed_extent
    shape = params.grid_shape()
    origin = (-MARGIN * pitch, -w / 2 - MARGIN * pitch, -MARGIN * pitch)
    x = origin[0] + (np.arange(shape[0]) + 0.5) * pitch
    y = origin[1] + (np.arange(shape[1]) + 0.5) * pitch
    z = origin[2] + (np.arange(shape[2]) + 0.5) * pitch
    r2 = ((x / d)[:, None, None] ** 2 + (y / (w / 2))[None, :, None] ** 2
          + ((z - t / 2) / (t / 2))[None, None, :] ** 2)
    inside = (r2 <= 1.0) & (x >= 0)[:, None, None]
    return inside, np.sqrt(np.minimum(r2, 1.0)), origin


def skin_shell(tissue: np.ndarray, layers: int) -> np.ndarray:
    core = ndimage.binary_erosion(tissue, structure=SIX, iterations=layers, border_value=0)
    return tissue & ~core


def _threshold_for_fraction(q: np.ndarray, target: float, max_iter: int = 32):
    """Integer threshold t such that mean(q >= t) is closest to target."""
    n = q.size
    lo, hi = int(q.min()), int(q.max()) + 1  # frac(lo) = 1, frac(hi) = 0
    it = 0
    while hi - lo > 1 and it < max_iter:
        mid = (lo + hi) // 2
        if np.count_nonzero(q >= mid) / n >= target:
            lo = mid
        else:
            hi = mid
        it += 1
    f_lo = np.count_nonzero(q >= lo) / n
    f_hi = np.count_nonzero(q >= hi) / n
    return (lo, f_lo) if abs(f_lo - target) <= abs(f_hi - target) else (hi, f_hi)


def generate_phantom(params: PhantomParams, tolerance: float = 0.05) -> VoxelPhantom:
    params.validate()
    pitch = params.voxel_pitch
    tissue, radius, origin = _outline(params)
    layers = int(min(2, max(1, round(params.texture.skin_mm / pitch))))
    skin = skin_shell(tissue, layers)
    interior = tissue & ~skin
    if not interior.any():
        raise GenerationError("outline has no interior voxels at this pitch")

    field_ = value_noise(tissue.shape, pitch, params.seed, params.texture)
    field_ += params.texture.central_bias * (1.0 - radius)
    q = np.floor(field_ * (1 << FIXED_POINT_BITS)).astype(np.int64)
    q_in = q[interior]
    threshold, achieved = _threshold_for_fraction(q_in, params.target_glandular_fraction)
    if abs(achieved - params.target_glandular_fraction) > tolerance:
        raise GenerationError(
            f"glandular fraction {achieved:.4f} misses target "
            f"{params.target_glandular_fraction:.4f} by more than {tolerance}")

    labels = np.zeros(tissue.shape, dtype=np.uint8)
    labels[interior] = Material.FAT
    labels[interior & (q >= threshold)] = Material.GLAND
    labels[skin] = Material.SKIN
    return VoxelPhantom(
        labels=labels,
        pitch=pitch,
        density_class=params.density_class,
        seed=params.seed,
        glandular_fraction_achieved=float(achieved),
        thickness_mm=float(params.uncompressed_extent[2]),
        origin_mm=origin,
        params=params,
    )


def glandular_fraction(phantom) -> float:
    labels = phantom.labels if isinstance(phantom, VoxelPhantom) else np.asarray(phantom)
    gland = np.count_nonzero(labels == Material.GLAND)
    fat = np.count_nonzero(labels == Material.FAT)
    if gland + fat == 0:
        raise ConfigurationError("glandular fraction undefined: no Fat or Gland voxels")
    return gland / (gland + fat)


def shell_closed(labels: np.ndarray) -> bool:
    """True if no Fat/Gland/Mass voxel has an Air 6-neighbour and the border is Air."""
    border = np.ones(labels.shape, dtype=bool)
    border[1:-1, 1:-1, 1:-1] = False
    if np.any(labels[border] != Material.AIR):
        return False
    air = labels == Material.AIR
    near_air = ndimage.binary_dilation(air, structure=SIX)
    soft = (labels == Material.FAT) | (labels == Material.GLAND) | (labels == Material.MASS)
    return not np.any(soft & near_air)


def candidate_sites(phantom: VoxelPhantom, min_margin_mm: float) -> np.ndarray:
    """Gland voxels at least ``min_margin_mm`` from any Air or Skin voxel.

    Stand-in for terminal duct lobular unit positions.  Rows are voxel
    indices in lexicographic order; an empty (0, 3) array is a valid result.
    """
    labels = phantom.labels
    body = (labels != Material.AIR) & (labels != Material.SKIN)
    dist = ndimage.distance_transform_edt(body, sampling=phantom.pitch)
    return np.argwhere((labels == Material.GLAND) & (dist >= min_margin_mm))


# -- cohorts ----------------------------------------------------------------

def derive_seed(base_seed: int, index: int) -> int:
    digest = hashlib.blake2b(f"{int(base_seed)}:{int(index)}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") & 0x7FFFFFFFFFFFFFFF


@dataclass(frozen=True)
class CohortSpec:
    """Cohort of S stochastic phantoms.

    ``params_distribution`` maps PhantomParams field names to samplers
    ``f(rng) -> value`` drawn per case; unlisted fields keep class defaults.
    """

    size: int
    base_seed: int
    density_class: DensityClass = DensityClass.FATTY
    signal_present_fraction: float = 0.5
    params_distribution: Mapping[str, Callable[[np.random.Generator], object]] = field(default_factory=dict)
    voxel_pitch: Optional[float] = None

    def validate(self) -> None:
        if self.size < 2:
            raise ConfigurationError(f"cohort size must be >= 2, got {self.size}")
        if not 0.0 <= self.signal_present_fraction <= 1.0:
            raise ConfigurationError("signal_present_fraction must lie in [0, 1]")

    @property
    def n_signal_present(self) -> int:
        return int(math.ceil(self.size * self.signal_present_fraction - 1e-12))

    def seeds(self) -> list[int]:
        seeds = [derive_seed(self.base_seed, k) for k in range(self.size)]
        if len(set(seeds)) != len(seeds):
            raise ConfigurationError("derived case seeds collide")
        return seeds

    def case_params(self, k: int, seed: Optional[int] = None) -> PhantomParams:
        seed = derive_seed(self.base_seed, k) if seed is None else seed
        params = PhantomParams.defaults(self.density_class, seed=seed, voxel_pitch=self.voxel_pitch)
        if self.params_distribution:
            rng = np.random.default_rng(seed)
            params = replace(params, **{name: sampler(rng)
                                        for name, sampler in sorted(self.params_distribution.items())})
        return params


def iter_cohort(spec: CohortSpec) -> Iterator[VoxelPhantom]:
    spec.validate()
    n_present = spec.n_signal_present
    for k, seed in enumerate(spec.seeds()):
        try:
            ph = generate_phantom(spec.case_params(k, seed))
        except (GenerationError, ConfigurationError) as exc:
            raise GenerationError(str(exc), case_index=k) from exc
        yield ph.evolve(signal_present=k < n_present, case_index=k)


def sample_cohort(spec: CohortSpec) -> list[VoxelPhantom]:
    return list(iter_cohort(spec))
