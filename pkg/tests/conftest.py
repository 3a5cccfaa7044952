import numpy as np
import pytest

from insilico_mammo.config import DensityClass
from insilico_mammo.phantom import Material, PhantomParams, VoxelPhantom, generate_phantom

ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, text: str):
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {text}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


def slab_phantom(thickness_mm: float, pitch: float = 1.0, n: int = 40, label=Material.FAT):
    """Box of one material, thickness along z, surrounded by one Air voxel."""
    nz = int(round(thickness_mm / pitch)) + 2
    lab = np.zeros((n, n, nz), np.uint8)
    lab[1:-1, 1:-1, 1:-1] = label
    return VoxelPhantom(labels=lab, pitch=pitch, density_class=DensityClass.FATTY, seed=0,
                        glandular_fraction_achieved=0.0, thickness_mm=thickness_mm,
                        origin_mm=(-n * pitch / 2, -n * pitch / 2, -pitch))


@pytest.fixture(scope="session")
def fatty_phantom():
    return generate_phantom(PhantomParams.defaults(DensityClass.FATTY, seed=1))


@pytest.fixture(scope="session")
def dense_phantom():
    return generate_phantom(PhantomParams.defaults(DensityClass.DENSE, seed=1))


# -- random I/O payloads ---------------------------------------------------------

IO_DTYPES = (np.uint8, np.int16, np.uint16, np.int32, np.float32, np.float64)


def random_array(rng):
    nd = int(rng.integers(1, 4))
    shape = tuple(int(v) for v in rng.integers(1, 9, nd))
    dt = np.dtype(IO_DTYPES[int(rng.integers(len(IO_DTYPES)))])
    if dt.kind == "f":
        a = rng.normal(scale=10.0 ** rng.integers(-5, 6), size=shape).astype(dt)
    else:
        info = np.iinfo(dt)
        a = rng.integers(info.min, info.max, size=shape, endpoint=True, dtype=dt)
    spacing = tuple(float(s) for s in rng.uniform(0.01, 5.0, nd))
    return a, spacing


def random_record(rng):
    from insilico_mammo.lesion import LesionRecord
    lo = tuple(int(v) for v in rng.integers(0, 200, 3))
    hi = tuple(int(a + b) for a, b in zip(lo, rng.integers(1, 40, 3)))
    c = tuple(int(rng.integers(a, b)) for a, b in zip(lo, hi))
    cmm = tuple(float(v) for v in rng.normal(scale=50, size=3)) if rng.random() < 0.8 else None
    rec = LesionRecord(center=c, nominal_radius=float(rng.choice([5.0, 7.0, 9.0])),
                       density_factor=float(rng.choice([1.0, 1.06, 1.1])), bounding_box=(lo, hi),
                       mass_seed=int(rng.integers(0, 2**63)), voxel_count=int(rng.integers(1, 10**6)),
                       center_mm=cmm)
    px = tuple(float(v) for v in rng.uniform(0, 224, 2)) if rng.random() < 0.8 else None
    return rec, px
