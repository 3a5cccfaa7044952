import numpy as np
import pytest

from insilico_mammo.compress import CompressionSpec, compress, reclose_shell, tissue_volume_mm3
from insilico_mammo.config import DensityClass, default_table
from insilico_mammo.errors import ConfigurationError, ConsistencyError
from insilico_mammo.lesion import generate_mass, place_mass
from insilico_mammo.phantom import Material, PhantomParams, generate_phantom, shell_closed


@pytest.mark.parametrize("dc,cm", [(DensityClass.FATTY, 6.0), (DensityClass.DENSE, 3.5),
                                   (DensityClass.HETERO, 4.5), (DensityClass.SCATTERED, 5.5)])
def test_class_thickness(dc, cm):
    spec = CompressionSpec.for_class(dc)
    assert spec.target_thickness == cm
    ph = generate_phantom(PhantomParams.defaults(dc, seed=2))
    c = compress(ph, spec)
    assert c.compressed and c.thickness_mm == pytest.approx(cm * 10)
    tissue_z = np.nonzero((c.labels != Material.AIR).any(axis=(0, 1)))[0]
    assert abs(len(tissue_z) * c.pitch - cm * 10) <= 2 * c.pitch


@pytest.mark.parametrize("dc", list(DensityClass))
def test_volume_and_shell(dc):
    spec = CompressionSpec.for_class(dc)
    for k in range(8):
        ph = generate_phantom(PhantomParams.defaults(dc, seed=300 + k))
        c = compress(ph, spec)
        assert 0.98 <= tissue_volume_mm3(c) / tissue_volume_mm3(ph) <= 1.02
        assert shell_closed(c.labels)


def test_lesion_remap(fatty_phantom):
    ph, rec = place_mass(fatty_phantom, generate_mass(7.0, 3), np.random.default_rng(2))
    spec = CompressionSpec.for_class(ph.density_class)
    c = compress(ph, spec)
    s = spec.target_thickness * 10 / ph.thickness_mm
    assert c.lesion.center_mm[2] == pytest.approx(rec.center_mm[2] * s, rel=1e-12)
    assert c.labels[c.lesion.center] != Material.AIR
    mass = np.argwhere(c.labels == Material.MASS)
    assert c.lesion.voxel_count == len(mass) > 0
    lo, hi = c.lesion.bounding_box
    assert tuple(mass.min(axis=0)) == lo and tuple(mass.max(axis=0) + 1) == hi


def test_noop_when_thin_enough(fatty_phantom):
    c = compress(fatty_phantom, CompressionSpec.for_class(DensityClass.FATTY))
    again = compress(c, CompressionSpec.for_class(DensityClass.FATTY))
    assert np.array_equal(again.labels, c.labels)
    assert again.notes and "skipped" in again.notes[-1]
    thicker = compress(fatty_phantom, CompressionSpec(target_thickness=50.0))
    assert thicker.labels is fatty_phantom.labels and not thicker.compressed


def test_deterministic(fatty_phantom):
    spec = CompressionSpec.for_class(DensityClass.FATTY)
    assert np.array_equal(compress(fatty_phantom, spec).labels, compress(fatty_phantom, spec).labels)


def test_reclose_shell_and_errors():
    lab = np.zeros((5, 5, 5), np.uint8)
    lab[1:4, 1:4, 1:4] = Material.FAT
    out = reclose_shell(lab)
    assert shell_closed(out)
    assert out[2, 2, 2] == Material.FAT
    lab[1, 2, 2] = Material.MASS
    with pytest.raises(ConsistencyError):
        reclose_shell(lab)
    with pytest.raises(ConfigurationError):
        CompressionSpec(target_thickness=0.0).validate()
    with pytest.raises(ConfigurationError):
        CompressionSpec(target_thickness=5.0, axis=0).validate()


def test_table_lists_class_thicknesses():
    t = default_table()
    assert sorted(t[c].compressed_cm for c in DensityClass) == [3.5, 4.5, 5.5, 6.0]
