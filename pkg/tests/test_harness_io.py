import numpy as np
import pytest

from conftest import random_array, random_record, slab_phantom
from insilico_mammo.config import DensityClass
from insilico_mammo.errors import FormatError
from insilico_mammo.harness import (GridPoint, layout_path, lesion_present, parse_layout, read_loc,
                                    read_mhd_raw, write_loc, write_mhd_raw)
from insilico_mammo.harness.locfile import format_loc, parse_loc
from insilico_mammo.harness.mhd import spacing_of
from insilico_mammo.xproj import AcquisitionConfig, GridSpec, Spectrum, simulate_projection


def test_mhd_3x3_identical_bytes(tmp_path):
    a = np.arange(9, dtype=np.float32).reshape(3, 3) / 7
    mhd, raw = write_mhd_raw(a, tmp_path / "img.mhd", spacing=(0.1, 0.2))
    b, h = read_mhd_raw(mhd)
    assert b.tobytes() == a.tobytes() and b.dtype == a.dtype
    assert raw.read_bytes() == a.astype("<f4").tobytes()
    assert h["DimSize"] == "3 3" and h["ElementType"] == "MET_FLOAT"
    assert spacing_of(h) == (0.1, 0.2)
    for key in ("NDims", "DimSize", "ElementType", "ElementSpacing", "ElementDataFile"):
        assert key in h


def test_mhd_axis_order(tmp_path):
    a = np.arange(24, dtype=np.int16).reshape(2, 3, 4)
    mhd, _ = write_mhd_raw(a, tmp_path / "v")
    b, h = read_mhd_raw(mhd)
    assert h["DimSize"] == "4 3 2" and np.array_equal(a, b)


def test_mhd_errors(tmp_path):
    mhd, raw = write_mhd_raw(np.zeros((3, 3), np.float32), tmp_path / "x.mhd")
    raw.write_bytes(raw.read_bytes()[:-4])
    with pytest.raises(FormatError):
        read_mhd_raw(mhd)
    mhd.write_text(mhd.read_text().replace("DimSize = 3 3", "DimSize = 3 4"))
    with pytest.raises(FormatError):
        read_mhd_raw(mhd)
    mhd.write_text(mhd.read_text().replace("MET_FLOAT", "MET_HALF"))
    with pytest.raises(FormatError):
        read_mhd_raw(mhd)
    with pytest.raises(FormatError):
        write_mhd_raw(np.zeros(3, np.complex64), tmp_path / "c.mhd")
    with pytest.raises(FormatError):
        write_mhd_raw(np.zeros(3, bool), tmp_path / "b.mhd")


def test_mhd_random_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    for k in range(20):
        a, sp = random_array(rng)
        mhd, _ = write_mhd_raw(a, tmp_path / f"r{k}.mhd", spacing=sp)
        b, h = read_mhd_raw(mhd)
        assert b.dtype == a.dtype and b.shape == a.shape and b.tobytes() == a.tobytes()
        assert spacing_of(h) == sp


def test_projection_roundtrip(tmp_path):
    cfg = AcquisitionConfig(histories=20_000, spectrum=Spectrum.monoenergetic(20.0),
                            grid=GridSpec(enabled=False), detector_shape=(32, 32),
                            detector_pitch_mm=0.5, binning=2, detector_origin_xy=(-8.0, -8.0))
    p = simulate_projection(slab_phantom(10.0, n=20), cfg)
    mhd, _ = write_mhd_raw(p.pixels, tmp_path / "projection_DM1.mhd")
    back, _ = read_mhd_raw(mhd)
    assert np.array_equal(back, p.pixels) and back.dtype == p.pixels.dtype


def test_loc_roundtrip_and_errors(tmp_path):
    rng = np.random.default_rng(1)
    for k in range(20):
        rec, px = random_record(rng)
        path = write_loc(rec, tmp_path / f"{k}.loc", px)
        assert read_loc(path) == (rec, px)
    line = format_loc(rec, px)
    with pytest.raises(FormatError):
        parse_loc(line + " 3")
    with pytest.raises(FormatError):
        parse_loc(line.replace(line.split()[0], "x", 1))
    (tmp_path / "two.loc").write_text(line + "\n" + line + "\n")
    with pytest.raises(FormatError):
        read_loc(tmp_path / "two.loc")


def test_layout_example():
    pt = GridPoint(DensityClass.HETERO, 5.0, 1.0, 100)
    p = layout_path(pt, 1)
    assert "P2_5.0_hetero.8337609.1/1" in p.as_posix()
    assert p.parts[:2] == ("data", "device_data_VICTREPhantoms_spic_1.0")
    assert p.parts[2] == "1.02e10"
    assert parse_layout(p) == (pt, 1, True)
    assert parse_layout(layout_path(pt, 2)) == (pt, 2, False)
    assert lesion_present(7) and not lesion_present(8)
    with pytest.raises(FormatError):
        parse_layout("data/elsewhere/1")
    with pytest.raises(FormatError):
        layout_path(pt, -1)


def test_layout_dose_folders():
    pt = GridPoint(DensityClass.FATTY, 7.0, 1.06, 20)
    assert layout_path(pt, 3).parts[2] == "4.44e09"
    assert parse_layout("/abs/prefix/" + layout_path(pt, 3).as_posix() + "/") == (pt, 3, True)
