"""Regenerate the bundled material and spectrum tables.

Needs ``xraylib`` and ``spekpy``; the package itself only reads the
text files written here.

    python tools/make_tables.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np
import spekpy
import xraylib as xrl

OUT = Path(sys.argv[1]) if len(sys.argv) > 1 else (
    Path(__file__).resolve().parents[1] / "src" / "insilico_mammo" / "data")

# mass fractions; tissue compositions after Hammerstein et al. (1979) and ICRU 46
MATERIALS = {
    "air": (0.001205, {"C": 0.000124, "N": 0.755268, "O": 0.231781, "Ar": 0.012827}),
    "skin": (1.09, {"H": 0.100, "C": 0.204, "N": 0.042, "O": 0.645, "Na": 0.002,
                    "P": 0.001, "S": 0.002, "Cl": 0.003, "K": 0.001}),
    "fat": (0.93, {"H": 0.112, "C": 0.619, "N": 0.017, "O": 0.251, "P": 0.001}),
    "gland": (1.04, {"H": 0.102, "C": 0.184, "N": 0.032, "O": 0.677, "P": 0.005}),
    "selenium": (4.28, {"Se": 1.0}),
    "rhodium": (12.41, {"Rh": 1.0}),
}

E_MIN, E_MAX, E_STEP = 5.0, 40.0, 0.5
X_MAX, X_STEP = 3.5, 0.01          # momentum transfer sin(theta/2)/lambda [1/A]
KVPS = range(24, 36)
BE_WINDOW_MM = 1.0
ANODE_ANGLE = 12.0


def _edges(comp):
    edges = []
    for sym in comp:
        z = xrl.SymbolToAtomicNumber(sym)
        for shell in (xrl.K_SHELL, xrl.L1_SHELL, xrl.L2_SHELL, xrl.L3_SHELL):
            try:
                e = xrl.EdgeEnergy(z, shell)
            except ValueError:
                continue
            if E_MIN < e < E_MAX:
                edges.append(e)
    return sorted(edges)


def _cs(comp, energy):
    photo = compt = rayl = 0.0
    for sym, w in comp.items():
        z = xrl.SymbolToAtomicNumber(sym)
        photo += w * xrl.CS_Photo(z, energy)
        compt += w * xrl.CS_Compt(z, energy)
        rayl += w * xrl.CS_Rayl(z, energy)
    return photo, compt, rayl


def write_material(name, density, comp):
    grid = list(np.round(np.arange(E_MIN, E_MAX + 1e-9, E_STEP), 4))
    rows = []
    edges = _edges(comp)
    for e in grid:
        rows.append((e, *_cs(comp, e)))
    for e in edges:
        rows.append((e, *_cs(comp, e - 5e-3)))
        rows.append((e, *_cs(comp, e + 5e-3)))
    # stable sort keeps below-edge row ahead of above-edge row
    rows.sort(key=lambda r: r[0])
    lines = [
        f"# material: {name}",
        f"# density_g_cm3: {density}",
        "# composition (mass fraction): " + " ".join(f"{k}={v}" for k, v in comp.items()),
        "# source: xraylib CS_Photo/CS_Compt/CS_Rayl, mixture rule",
        "# absorption edges appear as two rows at the same energy (below, above)",
        "# energy_keV photo_cm2_g compton_cm2_g rayleigh_cm2_g",
    ]
    lines += [f"{e:.4f} {p:.6e} {c:.6e} {r:.6e}" for e, p, c, r in rows]
    (OUT / "materials" / f"{name}.txt").write_text("\n".join(lines) + "\n")

    xs = np.round(np.arange(0.0, X_MAX + 1e-9, X_STEP), 4)
    f2 = np.zeros_like(xs)
    for sym, w in comp.items():
        z = xrl.SymbolToAtomicNumber(sym)
        a = xrl.AtomicWeight(z)
        f2 += w / a * np.array([xrl.FF_Rayl(z, x) ** 2 for x in xs])
    f2 /= f2[0]
    lines = [
        f"# material: {name}",
        "# squared atomic form factor of the mixture, independent-atom approximation,",
        "# normalised to 1 at x=0; x = sin(theta/2)/lambda in 1/Angstrom",
        "# source: xraylib FF_Rayl",
        "# x_inv_angstrom f2",
    ]
    lines += [f"{x:.4f} {v:.6e}" for x, v in zip(xs, f2)]
    (OUT / "materials" / f"{name}_ff.txt").write_text("\n".join(lines) + "\n")


def write_spectra():
    table = {}
    centers = None
    for kvp in KVPS:
        s = spekpy.Spek(kvp=kvp, th=ANODE_ANGLE, targ="W", dk=E_STEP)
        s.filter("Be", BE_WINDOW_MM)
        k, phi = s.get_spectrum()
        table[kvp] = dict(zip(np.round(k, 4), phi))
    centers = np.round(np.arange(E_MIN + E_STEP / 2, max(KVPS), E_STEP), 4)
    lines = [
        "# tungsten anode bremsstrahlung + characteristic emission, unfiltered by Rh",
        f"# source: SpekPy {spekpy.__version__}, anode angle {ANODE_ANGLE} deg, "
        f"{BE_WINDOW_MM} mm Be inherent window",
        f"# bin width {E_STEP} keV; first column is the bin centre; fluence in relative units",
        "# energy_keV " + " ".join(f"kvp{k}" for k in KVPS),
    ]
    for e in centers:
        vals = [table[k].get(e, 0.0) for k in KVPS]
        lines.append(f"{e:.4f} " + " ".join(f"{v:.6e}" for v in vals))
    (OUT / "spectra_w.txt").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    (OUT / "materials").mkdir(parents=True, exist_ok=True)
    for name, (density, comp) in MATERIALS.items():
        write_material(name, density, comp)
    write_spectra()
