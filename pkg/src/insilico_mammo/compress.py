"""Analytic craniocaudal compression.

Stands in for a finite-element compression step.  The thickness axis is
scaled uniformly to the target; each output slice is scaled in-plane by
b(zeta) = c * (1 + kappa * 4 zeta (1 - zeta)), a quadratic bulge that
peaks at mid-thickness.  x is scaled away from the chest wall plane and
y about the midline.  c is solved from the source slice areas so the
tissue volume of the resampled grid matches the input.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .config import DensityClass, default_table
from .errors import ConfigurationError, ConsistencyError
from .phantom import MARGIN, SIX, Material, VoxelPhantom

CC_AXIS = 2


@dataclass(frozen=True)
class CompressionSpec:
    target_thickness: float  # cm
    axis: int = CC_AXIS
    bulge: float = 0.1

    @classmethod
    def for_class(cls, density_class, table=None) -> "CompressionSpec":
        table = table or default_table()
        return cls(target_thickness=table[DensityClass.parse(density_class)].compressed_cm)

    def validate(self):
        if not self.target_thickness > 0:
            raise ConfigurationError(f"target thickness must be positive, got {self.target_thickness}")
        if self.axis != CC_AXIS:
            raise ConfigurationError("only craniocaudal (axis 2) compression is supported")
        if not 0 <= self.bulge < 1:
            raise ConfigurationError(f"bulge must lie in [0, 1), got {self.bulge}")


def _axis_mm(origin, n, pitch):
    return origin + (np.arange(n) + 0.5) * pitch


def reclose_shell(labels: np.ndarray) -> np.ndarray:
    """Turn Fat/Gland voxels touching Air into Skin; Mass touching Air is an error."""
    near_air = ndimage.binary_dilation(labels == Material.AIR, structure=SIX)
    if np.any(near_air & (labels == Material.MASS)):
        raise ConsistencyError("mass voxels exposed to air after resampling")
    soft = (labels == Material.FAT) | (labels == Material.GLAND)
    out = labels.copy()
    out[soft & near_air] = Material.SKIN
    return out


def compress(phantom: VoxelPhantom, spec: CompressionSpec) -> VoxelPhantom:
    spec.validate()
    t0 = phantom.thickness_mm
    t1 = spec.target_thickness * 10.0
    if t1 >= t0 - 1e-9:
        return phantom.evolve(notes=phantom.notes + (
            f"compression skipped: target {t1:g} mm >= current {t0:g} mm",))

    p = phantom.pitch
    labels = phantom.labels
    ox, oy, oz = phantom.origin_mm
    nx, ny, nz = labels.shape
    s = t1 / t0
    kappa = spec.bulge

    tissue = labels != Material.AIR
    area_src = tissue.sum(axis=(0, 1)).astype(float)  # voxels per source slice
    n_src = float(area_src.sum())

    nz1 = int(math.ceil(t1 / p - 1e-9)) + 2 * MARGIN
    z1 = _axis_mm(oz, nz1, p)
    zeta = np.clip(z1 / t1, 0.0, 1.0)
    g = 1.0 + kappa * 4.0 * zeta * (1.0 - zeta)
    ksrc = np.floor((z1 / s - oz) / p).astype(int)
    valid = (ksrc >= 0) & (ksrc < nz)
    denom = float(np.sum(g[valid] ** 2 * area_src[ksrc[valid]]))
    c = math.sqrt(n_src / denom)
    b = c * g

    # output in-plane extent: tissue spans x in [0, x_max], y in [-y_max, y_max]
    xs = _axis_mm(ox, nx, p)
    ys = _axis_mm(oy, ny, p)
    tx = tissue.any(axis=(1, 2))
    ty = tissue.any(axis=(0, 2))
    x_max = (xs[tx].max() + p) * b.max()
    y_max = (np.abs(ys[ty]).max() + p) * b.max()
    nx1 = int(math.ceil(x_max / p)) + 2 * MARGIN
    ny1 = 2 * (int(math.ceil(y_max / p)) + MARGIN)
    ox1, oy1 = -MARGIN * p, -ny1 * p / 2
    x1 = _axis_mm(ox1, nx1, p)
    y1 = _axis_mm(oy1, ny1, p)

    out = np.zeros((nx1, ny1, nz1), dtype=labels.dtype)
    for k in np.nonzero(valid)[0]:
        isrc = np.floor((x1 / b[k] - ox) / p).astype(int)
        jsrc = np.floor((y1 / b[k] - oy) / p).astype(int)
        iok = (isrc >= 0) & (isrc < nx)
        jok = (jsrc >= 0) & (jsrc < ny)
        plane = labels[:, :, ksrc[k]]
        sl = np.zeros((nx1, ny1), dtype=labels.dtype)
        sl[np.ix_(iok, jok)] = plane[np.ix_(isrc[iok], jsrc[jok])]
        out[:, :, k] = sl
    # keep the border air even if the bulge overshoots
    out[[0, -1], :, :] = 0
    out[:, [0, -1], :] = 0
    out[:, :, [0, -1]] = 0
    out = reclose_shell(out)

    lesion = phantom.lesion
    if lesion is not None:
        cx, cy, cz = lesion.center_mm if lesion.center_mm is not None else phantom.voxel_center_mm(lesion.center)
        cz1 = cz * s
        zz = min(max(cz1 / t1, 0.0), 1.0)
        bc = c * (1.0 + kappa * 4.0 * zz * (1.0 - zz))
        cmm = (cx * bc, cy * bc, cz1)
        cidx = tuple(int(np.floor((v - o) / p)) for v, o in zip(cmm, (ox1, oy1, oz)))
        mass = np.argwhere(out == Material.MASS)
        inside = all(0 <= i < n for i, n in zip(cidx, out.shape))
        if len(mass) == 0 or not inside or out[cidx] == Material.AIR:
            raise ConsistencyError(f"lesion centre {cmm} mapped outside tissue")
        lesion = replace(
            lesion,
            center=cidx,
            center_mm=tuple(float(v) for v in cmm),
            bounding_box=(tuple(int(v) for v in mass.min(axis=0)),
                          tuple(int(v) + 1 for v in mass.max(axis=0))),
            voxel_count=len(mass),
        )

    gl = np.count_nonzero(out == Material.GLAND)
    ft = np.count_nonzero(out == Material.FAT)
    return phantom.evolve(
        labels=out,
        thickness_mm=t1,
        origin_mm=(ox1, oy1, oz),
        lesion=lesion,
        compressed=True,
        glandular_fraction_achieved=gl / (gl + ft) if gl + ft else phantom.glandular_fraction_achieved,
    )


def tissue_volume_mm3(phantom: VoxelPhantom) -> float:
    return phantom.tissue_voxels() * phantom.pitch**3
