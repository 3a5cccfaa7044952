"""Monte Carlo digital-mammography projection.

World frame: detector entrance plane at z = 0, source above it at
z = SID.  The chest-wall plane of the phantom (x = 0) sits over the
detector edge and the breast underside rests on a support ``support_mm``
above the detector.  Pixels hold deposited energy in keV per pixel.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..config import DensityClass, default_table
from ..errors import (ConfigurationError, DegenerateGeometryError, PhysicsError,
                      UnsupportedModeError)
from ..phantom import Material, VoxelPhantom
from . import kernels as K
from .materials import MaterialTable, Spectrum, _check_range, build_spectrum

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
KEV_TO_J = 1.602176634e-16
NOISE_STREAM = 0x6E6F697365


class ScatterMode(str, enum.Enum):
    PRIMARY_ONLY = "PrimaryOnly"
    FULL_TRANSPORT = "FullTransport"


@dataclass(frozen=True)
class GridSpec:
    ratio: float = 5.0
    frequency_lp_mm: float = 31.0  # recorded only; the analytic model uses the ratio
    enabled: bool = True
    primary_transmission: float = 0.72

    def validate(self):
        if self.ratio < 0 or self.frequency_lp_mm < 0:
            raise ConfigurationError("grid ratio and frequency must be non-negative")
        if not 0 < self.primary_transmission <= 1:
            raise ConfigurationError("grid primary transmission must lie in (0, 1]")

    def transmission(self, tan_delta):
        if not self.enabled:
            return np.ones_like(np.asarray(tan_delta, dtype=float))
        return self.primary_transmission * np.maximum(0.0, 1.0 - self.ratio * np.abs(tan_delta))


@dataclass(frozen=True)
class AcquisitionConfig:
    histories: int
    spectrum: Spectrum
    sid_mm: float = 650.0
    detector_pitch_mm: float = 0.5
    detector_shape: tuple[int, int] = (448, 448)
    binning: int = 2
    support_mm: float = 20.0
    source_xy: tuple[float, float] = (0.0, 0.0)
    detector_origin_xy: Optional[tuple[float, float]] = None  # default: chest wall edge, centred in y
    focal_spot_fwhm_um: float = 300.0
    grid: GridSpec = field(default_factory=GridSpec)
    electronic_noise_sigma: float = 1.0  # keV per read-out pixel; not given in the source
    scatter_mode: ScatterMode = ScatterMode.PRIMARY_ONLY
    seed: int = 0
    batch_size: int = 65536
    se_thickness_um: float = 200.0
    fluorescence: bool = False
    dose_scale: float = 1.0

    @classmethod
    def for_class(cls, density_class, relative_dose: int = 100, dose_scale: Optional[float] = None,
                  table=None, **kw) -> "AcquisitionConfig":
        table = table or default_table()
        row = table[density_class]
        scale = table.dose_scale if dose_scale is None else dose_scale
        n = max(int(histories_for(relative_dose, density_class, table) // scale), 10_000)
        kw.setdefault("spectrum", build_spectrum(row.kvp))
        kw.setdefault("histories", n)  # an explicit count overrides the dose ladder
        return cls(dose_scale=float(scale), **kw)

    @property
    def origin_xy(self) -> tuple[float, float]:
        if self.detector_origin_xy is not None:
            return self.detector_origin_xy
        return (0.0, -self.detector_shape[1] * self.detector_pitch_mm / 2)

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.detector_shape[0] // self.binning, self.detector_shape[1] // self.binning)

    def validate(self):
        if self.histories < 10_000:
            raise ConfigurationError(f"histories must be >= 1e4, got {self.histories}")
        if self.focal_spot_fwhm_um < 0:
            raise ConfigurationError("focal spot FWHM must be non-negative")
        if self.electronic_noise_sigma < 0:
            raise ConfigurationError("electronic noise sigma must be non-negative")
        if self.binning < 1 or any(n % self.binning for n in self.detector_shape):
            raise ConfigurationError("detector dims must be divisible by the binning factor")
        if self.sid_mm <= self.support_mm or self.detector_pitch_mm <= 0 or self.batch_size < 1:
            raise ConfigurationError("bad geometry")
        self.grid.validate()
        _check_range(self.spectrum)

    def evolve(self, **changes) -> "AcquisitionConfig":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Projection:
    pixels: np.ndarray  # binned image after electronic noise
    primary: np.ndarray  # binned, before noise
    scatter: np.ndarray
    lesion_px: Optional[tuple[float, float]]
    config: AcquisitionConfig
    seed: int
    tallies: dict
    mean_glandular_dose_estimate: Optional[float] = None  # mGy, uncalibrated

    @property
    def pre_noise(self) -> np.ndarray:
        return self.primary + self.scatter


def histories_for(relative_dose, density_class, table=None) -> int:
    table = table or default_table()
    row = table[DensityClass.parse(density_class)]
    if int(relative_dose) != relative_dose or int(relative_dose) not in table.relative_doses:
        raise ConfigurationError(f"relative dose {relative_dose} not in {table.relative_doses}")
    return row.histories_100 * int(relative_dose) // 100


# -- chain components exposed for testing --------------------------------------

def apply_focal_blur(origins, fwhm_um: float, rng: np.random.Generator):
    if fwhm_um < 0:
        raise ConfigurationError("focal spot FWHM must be non-negative")
    origins = np.array(origins, dtype=float)
    if fwhm_um == 0:
        return origins
    return origins + rng.normal(size=origins.shape) * (fwhm_um * 1e-3 * FWHM_TO_SIGMA)


def apply_grid(weights, directions, focus_directions, grid: GridSpec):
    """Scale photon weights by the grid transmission for their incidence angle."""
    grid.validate()
    weights = np.array(weights, dtype=float)
    if not grid.enabled:
        return weights
    d = np.asarray(directions, dtype=float)
    f = np.asarray(focus_directions, dtype=float)
    tan_delta = d[..., 0] / d[..., 2] - f[..., 0] / f[..., 2]
    return weights * grid.transmission(tan_delta)


def add_electronic_noise(image, sigma: float, seed: int):
    if sigma < 0:
        raise ConfigurationError("electronic noise sigma must be non-negative")
    image = np.array(image, dtype=float)
    if sigma == 0:
        return image
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, NOISE_STREAM])
    return image + rng.normal(scale=sigma, size=image.shape)


def bin_image(image, b: int):
    if b == 1:
        return image
    nx, ny = image.shape
    return image.reshape(nx // b, b, ny // b, b).sum(axis=(1, 3))


# -- driver ------------------------------------------------------------------

def _geometry(phantom: VoxelPhantom, cfg: AcquisitionConfig):
    geo = np.zeros(K.GEO_LEN)
    sx, sy = cfg.source_xy
    x0, y0 = cfg.origin_xy
    p = cfg.detector_pitch_mm
    dnx, dny = cfg.detector_shape
    geo[K.GEO_SX], geo[K.GEO_SY], geo[K.GEO_SZ] = sx, sy, cfg.sid_mm
    geo[K.GEO_SIGMA] = cfg.focal_spot_fwhm_um * 1e-3 * FWHM_TO_SIGMA
    geo[K.GEO_DX0], geo[K.GEO_DY0], geo[K.GEO_DPITCH] = x0, y0, p
    geo[K.GEO_DNX], geo[K.GEO_DNY] = dnx, dny
    ox, oy, oz = phantom.origin_mm
    geo[K.GEO_BX], geo[K.GEO_BY], geo[K.GEO_BZ] = ox, oy, oz + cfg.support_mm
    geo[K.GEO_VPITCH] = phantom.pitch
    geo[K.GEO_GRID_ON] = 1.0 if cfg.grid.enabled else 0.0
    geo[K.GEO_GRID_RATIO] = cfg.grid.ratio
    geo[K.GEO_GRID_TP] = cfg.grid.primary_transmission
    geo[K.GEO_SE_MM] = cfg.se_thickness_um * 1e-3
    geo[K.GEO_FLUOR] = 1.0 if cfg.fluorescence else 0.0
    return geo


def _lesion_px(phantom, cfg):
    rec = phantom.lesion
    if rec is None:
        return None
    c = np.asarray(rec.center_mm if rec.center_mm is not None else phantom.voxel_center_mm(rec.center),
                   dtype=float)
    c[2] += cfg.support_mm
    s = np.array([cfg.source_xy[0], cfg.source_xy[1], cfg.sid_mm])
    t = s[2] / (s[2] - c[2])
    hit = s + t * (c - s)
    x0, y0 = cfg.origin_xy
    step = cfg.detector_pitch_mm * cfg.binning
    px = ((hit[0] - x0) / step, (hit[1] - y0) / step)
    nu, nv = cfg.image_shape
    if 0 <= px[0] < nu and 0 <= px[1] < nv:
        return (float(px[0]), float(px[1]))
    return None


def alias_table(weights):
    """Walker alias table (prob, alias) for a discrete distribution."""
    w = np.asarray(weights, dtype=float)
    n = len(w)
    q = w / w.sum() * n
    prob = np.ones(n)
    alias = np.arange(n, dtype=np.int64)
    small = [i for i in range(n) if q[i] < 1.0]
    large = [i for i in range(n) if q[i] >= 1.0]
    while small and large:
        s, l = small.pop(), large.pop()
        prob[s], alias[s] = q[s], l
        q[l] -= 1.0 - q[s]
        (small if q[l] < 1.0 else large).append(l)
    return prob, alias


def _spectrum_arrays(spec: Spectrum):
    prob, alias = alias_table(spec.fluence)
    return prob, alias, np.ascontiguousarray(spec.energies, dtype=float), float(spec.bin_width)


def simulate_projection(phantom: VoxelPhantom, config: AcquisitionConfig,
                        materials: Optional[MaterialTable] = None, threads: int = 1) -> Projection:
    config.validate()
    if materials is None:
        df = phantom.lesion.density_factor if phantom.lesion is not None else 1.0
        materials = MaterialTable.load(density_factor=df)
    labels = np.ascontiguousarray(phantom.labels, dtype=np.uint8)
    geo = _geometry(phantom, config)
    prob, alias, centres, width = _spectrum_arrays(config.spectrum)
    e0, de = materials.e0, materials.de
    det_mu = np.ascontiguousarray(materials.detector_mu_photo)
    full = ScatterMode(config.scatter_mode) == ScatterMode.FULL_TRANSPORT
    dnx, dny = config.detector_shape
    n_batches = -(-config.histories // config.batch_size)
    if full:
        mu_ph = np.ascontiguousarray(materials.mu_photo)
        mu_co = np.ascontiguousarray(materials.mu_compton)
        mu_ra = np.ascontiguousarray(materials.mu_rayleigh)
        mu_maj = np.ascontiguousarray(materials.mu_total.max(axis=0))
        if np.any(mu_maj <= 0):
            raise ConfigurationError("majorant must be positive at every energy")
        ff_x2 = np.ascontiguousarray(materials.ff_x2)
        ff_cdf = np.ascontiguousarray(materials.ff_cdf)
    else:
        mu_tot = np.ascontiguousarray(materials.mu_total)

    def run(b):
        n = min(config.batch_size, config.histories - b * config.batch_size)
        key = np.uint64(K.splitmix_key(int(config.seed), b))
        tally = np.zeros(K.N_TALLY)
        prim = np.zeros((dnx, dny))
        if full:
            scat = np.zeros((dnx, dny))
            bad = K.full_batch(key, n, labels, mu_ph, mu_co, mu_ra, mu_maj, e0, de, det_mu,
                               ff_x2, ff_cdf, prob, alias, centres, width, geo, prim, scat, tally)
        else:
            scat = None
            bad = K.primary_batch(key, n, labels, mu_tot, e0, de, det_mu, prob, alias, centres, width,
                                  geo, prim, tally)
        return b, bad, prim, scat, tally

    prim = np.zeros((dnx, dny))
    scat = np.zeros((dnx, dny))
    tally = np.zeros(K.N_TALLY)
    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        for b, bad, p_b, s_b, t_b in pool.map(run, range(n_batches)):
            if bad >= 0 or t_b[K.T_BAD] > 0:
                raise PhysicsError(
                    f"non-finite or failed photon: seed {config.seed}, batch {b}, history {bad}")
            prim += p_b
            if s_b is not None:
                scat += s_b
            tally += t_b
    if tally[K.T_HITS] == 0:
        raise DegenerateGeometryError("no photon reached the detector")

    primary = bin_image(prim, config.binning)
    scatter = bin_image(scat, config.binning)
    pixels = add_electronic_noise(primary + scatter, config.electronic_noise_sigma, config.seed)
    tallies = {
        "emitted_keV": tally[K.T_EMITTED],
        "deposited_keV": {m.name.lower(): tally[K.T_DEP0 + m] for m in Material},
        "grid_keV": tally[K.T_GRID],
        "detector_keV": tally[K.T_DETECTOR],
        "escaped_keV": tally[K.T_ESCAPED],
        "detector_hits": int(tally[K.T_HITS]),
        "histories": int(config.histories),
        "batches": int(n_batches),
    }
    mgd = None
    if full:
        mass_g = gland_mass_g(phantom, materials)
        if mass_g > 0:
            mgd = tally[K.T_DEP0 + Material.GLAND] * KEV_TO_J / (mass_g * 1e-3) * 1e3
    return Projection(pixels, primary, scatter, _lesion_px(phantom, config), config,
                      int(config.seed), tallies, mgd)


def gland_mass_g(phantom: VoxelPhantom, materials: MaterialTable) -> float:
    n = np.count_nonzero(phantom.labels == Material.GLAND)
    return float(n * (phantom.pitch * 0.1) ** 3 * materials.density[Material.GLAND])


def glandular_dose_estimate(phantom: VoxelPhantom, config: AcquisitionConfig,
                            materials: Optional[MaterialTable] = None, threads: int = 1) -> float:
    """Energy (keV) deposited in Gland voxels over all histories."""
    if ScatterMode(config.scatter_mode) != ScatterMode.FULL_TRANSPORT:
        raise UnsupportedModeError("glandular dose needs FullTransport mode")
    proj = simulate_projection(phantom, config.evolve(electronic_noise_sigma=0.0), materials, threads)
    return float(proj.tallies["deposited_keV"]["gland"])
