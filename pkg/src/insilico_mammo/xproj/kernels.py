"""Numba photon kernels.

One call processes one batch of histories with its own counter-based
stream, so a batch's output depends only on (key, batch size).  Lengths
are in mm, attenuation coefficients in cm^-1.

Geometry vector ``geo`` layout (see ``GEO_*`` indices): focal-spot centre,
focal sigma, detector origin/pitch/dims, voxel
box origin and pitch, grid parameters, selenium thickness.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

GOLD = np.uint64(0x9E3779B97F4A7C15)
MASK64 = (1 << 64) - 1

(GEO_SX, GEO_SY, GEO_SZ, GEO_SIGMA,
 GEO_DX0, GEO_DY0, GEO_DPITCH, GEO_DNX, GEO_DNY,
 GEO_BX, GEO_BY, GEO_BZ, GEO_VPITCH,
 GEO_GRID_ON, GEO_GRID_RATIO, GEO_GRID_TP, GEO_SE_MM, GEO_FLUOR) = range(18)
GEO_LEN = 18

# tally slots
T_EMITTED, T_DEP0 = 0, 1  # T_DEP0 .. T_DEP0+4 per label
T_GRID, T_DETECTOR, T_ESCAPED, T_HITS, T_BAD = 6, 7, 8, 9, 10
N_TALLY = 11

ME_C2 = 511.0
SE_K_EDGE = 12.6578
SE_KA = 11.208
SE_K_YIELD = 0.6019
SE_JUMP = 7.225


def splitmix_key(seed: int, batch: int) -> int:
    """Pure-Python stream key for (seed, batch); mirrors the kernel mixer."""
    def mix(z):
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)
    return mix(mix(seed & MASK64) ^ ((batch * 0x9E3779B97F4A7C15 + 0x632BE59BD9B4E019) & MASK64))


@nb.njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True, inline="always")
def _u01(st):
    st[0] += GOLD
    return (float(_mix(st[0]) >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True)
def uniform_stream(key, n):
    st = np.empty(1, dtype=np.uint64)
    st[0] = key
    out = np.empty(n)
    for i in range(n):
        out[i] = _u01(st)
    return out


@nb.njit(cache=True, inline="always")
def _normal(st):
    u1 = _u01(st)
    u2 = _u01(st)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@nb.njit(cache=True, inline="always")
def _interp(arr, e0, de, e):
    f = (e - e0) / de
    i = int(f)
    n = arr.shape[0]
    if i < 0:
        return arr[0]
    if i >= n - 1:
        return arr[n - 1]
    f -= i
    return arr[i] * (1.0 - f) + arr[i + 1] * f


@nb.njit(cache=True, inline="always")
def _interp_row(arr, row, e0, de, e):
    f = (e - e0) / de
    i = int(f)
    n = arr.shape[1]
    if i < 0:
        return arr[row, 0]
    if i >= n - 1:
        return arr[row, n - 1]
    f -= i
    return arr[row, i] * (1.0 - f) + arr[row, i + 1] * f


@nb.njit(cache=True, inline="always")
def _sample_energy(st, prob, alias, centres, width):
    """Walker alias draw of the bin, then uniform within the bin."""
    u = _u01(st) * prob.shape[0]
    i = int(u)
    if u - i >= prob[i]:
        i = alias[i]
    return centres[i] + (_u01(st) - 0.5) * width


@nb.njit(cache=True)
def _emit(st, geo, out):
    """Focal-spot origin and a direction uniform in solid angle over the detector.

    A detector point is drawn uniformly and kept with probability cos^3 of
    its incidence angle, which is the solid-angle Jacobian of the plane.
    out <- (ox, oy, oz, dx, dy, dz, hit_x, hit_y)
    """
    s = geo[GEO_SIGMA]
    ox, oy, oz = geo[GEO_SX], geo[GEO_SY], geo[GEO_SZ]
    if s > 0.0:
        r1 = s * math.sqrt(-2.0 * math.log(_u01(st)))
        a1 = 2.0 * math.pi * _u01(st)
        ox += r1 * math.cos(a1)
        oy += r1 * math.sin(a1)
        oz += s * math.sqrt(-2.0 * math.log(_u01(st))) * math.cos(2.0 * math.pi * _u01(st))
    x0, y0, p = geo[GEO_DX0], geo[GEO_DY0], geo[GEO_DPITCH]
    wx = geo[GEO_DNX] * p
    wy = geo[GEO_DNY] * p
    for _ in range(100000):
        hx = x0 + _u01(st) * wx
        hy = y0 + _u01(st) * wy
        dx = hx - ox
        dy = hy - oy
        r2 = dx * dx + dy * dy + oz * oz
        r = math.sqrt(r2)
        c = oz / r
        if _u01(st) <= c * c * c:
            out[0], out[1], out[2] = ox, oy, oz
            out[3], out[4], out[5] = dx / r, dy / r, -c
            out[6], out[7] = hx, hy
            return True
    return False


@nb.njit(cache=True, inline="always")
def _box_hit(ox, oy, oz, dx, dy, dz, bx, by, bz, lx, ly, lz):
    t0, t1 = -1e300, 1e300
    for a in range(3):
        if a == 0:
            o, d, lo, hi = ox, dx, bx, bx + lx
        elif a == 1:
            o, d, lo, hi = oy, dy, by, by + ly
        else:
            o, d, lo, hi = oz, dz, bz, bz + lz
        if d == 0.0:
            if o < lo or o >= hi:
                return 1.0, 0.0
        else:
            ta = (lo - o) / d
            tb = (hi - o) / d
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
    return t0, t1


@nb.njit(cache=True)
def _line_integral(ox, oy, oz, dx, dy, dz, labels, mu_e, bx, by, bz, vp):
    """Amanatides-Woo traversal; returns sum of mu * length (dimensionless)."""
    nx, ny, nz = labels.shape
    t0, t1 = _box_hit(ox, oy, oz, dx, dy, dz, bx, by, bz, nx * vp, ny * vp, nz * vp)
    if t1 <= t0 or t1 <= 0.0:
        return 0.0
    t0 = max(t0, 0.0)
    tm = t0 + 1e-9 * vp
    px = ox + dx * tm
    py = oy + dy * tm
    pz = oz + dz * tm
    i = min(max(int(math.floor((px - bx) / vp)), 0), nx - 1)
    j = min(max(int(math.floor((py - by) / vp)), 0), ny - 1)
    k = min(max(int(math.floor((pz - bz) / vp)), 0), nz - 1)
    big = 1e300
    if dx > 0:
        si, tmx, tdx = 1, (bx + (i + 1) * vp - ox) / dx, vp / dx
    elif dx < 0:
        si, tmx, tdx = -1, (bx + i * vp - ox) / dx, -vp / dx
    else:
        si, tmx, tdx = 0, big, big
    if dy > 0:
        sj, tmy, tdy = 1, (by + (j + 1) * vp - oy) / dy, vp / dy
    elif dy < 0:
        sj, tmy, tdy = -1, (by + j * vp - oy) / dy, -vp / dy
    else:
        sj, tmy, tdy = 0, big, big
    if dz > 0:
        sk, tmz, tdz = 1, (bz + (k + 1) * vp - oz) / dz, vp / dz
    elif dz < 0:
        sk, tmz, tdz = -1, (bz + k * vp - oz) / dz, -vp / dz
    else:
        sk, tmz, tdz = 0, big, big
    acc = 0.0
    t = t0
    while True:
        tn = min(tmx, tmy, tmz, t1)
        acc += mu_e[labels[i, j, k]] * (tn - t)
        if tn >= t1:
            break
        t = tn
        if tmx <= tmy and tmx <= tmz:
            i += si
            tmx += tdx
            if i < 0 or i >= nx:
                break
        elif tmy <= tmz:
            j += sj
            tmy += tdy
            if j < 0 or j >= ny:
                break
        else:
            k += sk
            tmz += tdz
            if k < 0 or k >= nz:
                break
    return acc * 0.1


@nb.njit(cache=True, inline="always")
def _grid_factor(geo, ox, oy, oz, dx, dz, hx):
    """Transmission through a focused linear grid with lamellae along y."""
    if geo[GEO_GRID_ON] == 0.0:
        return 1.0
    fx = hx - geo[GEO_SX]
    fz = -geo[GEO_SZ]
    tand = abs(dx / dz - fx / fz)
    return geo[GEO_GRID_TP] * max(0.0, 1.0 - geo[GEO_GRID_RATIO] * tand)


@nb.njit(cache=True, nogil=True)
def primary_batch(key, n, labels, mu_tot, e0, de, det_mu, prob, alias, centres, width, geo, image, tally):
    """Expected-value primary imaging: each ray scores E * T * grid * eta."""
    st = np.empty(1, dtype=np.uint64)
    st[0] = key
    buf = np.empty(8)
    nl = mu_tot.shape[0]
    mu_e = np.empty(nl)
    p = geo[GEO_DPITCH]
    dnx, dny = int(geo[GEO_DNX]), int(geo[GEO_DNY])
    se_cm = geo[GEO_SE_MM] * 0.1
    for h in range(n):
        e = _sample_energy(st, prob, alias, centres, width)
        if not _emit(st, geo, buf):
            tally[T_BAD] += 1
            continue
        ox, oy, oz, dx, dy, dz, hx, hy = buf[0], buf[1], buf[2], buf[3], buf[4], buf[5], buf[6], buf[7]
        tally[T_EMITTED] += e
        for m in range(nl):
            mu_e[m] = _interp_row(mu_tot, m, e0, de, e)
        li = _line_integral(ox, oy, oz, dx, dy, dz, labels, mu_e,
                            geo[GEO_BX], geo[GEO_BY], geo[GEO_BZ], geo[GEO_VPITCH])
        tr = math.exp(-li)
        g = _grid_factor(geo, ox, oy, oz, dx, dz, hx)
        eta = 1.0 - math.exp(-_interp(det_mu, e0, de, e) * se_cm / abs(dz))
        w = e * tr * g * eta
        if not math.isfinite(w):
            tally[T_BAD] += 1
            return h
        ix = min(int((hx - geo[GEO_DX0]) / p), dnx - 1)
        iy = min(int((hy - geo[GEO_DY0]) / p), dny - 1)
        image[ix, iy] += w
        tally[T_DETECTOR] += w
        if w > 0.0:
            tally[T_HITS] += 1.0
    return -1


@nb.njit(cache=True, inline="always")
def _rotate(dx, dy, dz, c, phi):
    s = math.sqrt(max(0.0, 1.0 - c * c))
    cp, sp = math.cos(phi), math.sin(phi)
    if abs(dz) > 0.99999:
        sg = 1.0 if dz > 0 else -1.0
        return s * cp, s * sp, sg * c
    r = math.sqrt(1.0 - dz * dz)
    nx = c * dx + s * (dx * dz * cp - dy * sp) / r
    ny = c * dy + s * (dy * dz * cp + dx * sp) / r
    nz = c * dz - s * r * cp
    n = math.sqrt(nx * nx + ny * ny + nz * nz)
    return nx / n, ny / n, nz / n


@nb.njit(cache=True)
def _sample_compton(st, e):
    """Klein-Nishina polar cosine by rejection; returns (cos, scattered energy)."""
    k = e / ME_C2
    while True:
        c = 2.0 * _u01(st) - 1.0
        pr = 1.0 / (1.0 + k * (1.0 - c))
        f = pr * pr * (pr + 1.0 / pr - (1.0 - c * c))
        if 2.0 * _u01(st) <= f:
            return c, e * pr


@nb.njit(cache=True)
def _sample_rayleigh(st, e, ff_x2, ff_cdf, row):
    """Thomson x F^2 polar cosine: invert the form-factor CDF then accept (1+c^2)/2."""
    xm = e / 12.39842
    x2m = xm * xm
    dx2 = ff_x2[1] - ff_x2[0]
    amax = _interp_row(ff_cdf, row, 0.0, dx2, x2m)
    nf = ff_x2.shape[0]
    while True:
        a = _u01(st) * amax
        lo, hi = 0, nf - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if ff_cdf[row, mid] < a:
                lo = mid
            else:
                hi = mid
        c0, c1 = ff_cdf[row, lo], ff_cdf[row, hi]
        f = (a - c0) / (c1 - c0) if c1 > c0 else 0.0
        x2 = min(ff_x2[lo] + f * dx2, x2m)
        c = 1.0 - 2.0 * x2 / x2m
        if 2.0 * _u01(st) <= 1.0 + c * c:
            return c


@nb.njit(cache=True, nogil=True)
def full_batch(key, n, labels, mu_ph, mu_co, mu_ra, mu_maj, e0, de, det_mu,
               ff_x2, ff_cdf, prob, alias, centres, width, geo, prim, scat, tally):
    """Woodcock tracking with photoelectric, Compton and Rayleigh events."""
    st = np.empty(1, dtype=np.uint64)
    st[0] = key
    buf = np.empty(8)
    nx, ny, nz = labels.shape
    vp = geo[GEO_VPITCH]
    bx, by, bz = geo[GEO_BX], geo[GEO_BY], geo[GEO_BZ]
    lx, ly, lz = nx * vp, ny * vp, nz * vp
    p = geo[GEO_DPITCH]
    x0, y0 = geo[GEO_DX0], geo[GEO_DY0]
    dnx, dny = int(geo[GEO_DNX]), int(geo[GEO_DNY])
    se_cm = geo[GEO_SE_MM] * 0.1
    fluor = geo[GEO_FLUOR] != 0.0
    p_fluor = SE_K_YIELD * (SE_JUMP - 1.0) / SE_JUMP
    for h in range(n):
        e = _sample_energy(st, prob, alias, centres, width)
        if not _emit(st, geo, buf):
            tally[T_BAD] += 1
            continue
        x, y, z, dx, dy, dz = buf[0], buf[1], buf[2], buf[3], buf[4], buf[5]
        tally[T_EMITTED] += e
        scattered = False
        alive = True
        t0, t1 = _box_hit(x, y, z, dx, dy, dz, bx, by, bz, lx, ly, lz)
        if t1 > t0 and t1 > 0.0:
            if t0 > 0.0:
                x += dx * t0
                y += dy * t0
                z += dz * t0
            for _ in range(100000):
                t0, t1 = _box_hit(x, y, z, dx, dy, dz, bx, by, bz, lx, ly, lz)
                texit = t1
                if texit <= 0.0:
                    break
                maj = _interp(mu_maj, e0, de, e)
                s = -math.log(_u01(st)) / maj * 10.0
                if s >= texit:
                    x += dx * texit
                    y += dy * texit
                    z += dz * texit
                    break
                x += dx * s
                y += dy * s
                z += dz * s
                i = min(max(int((x - bx) / vp), 0), nx - 1)
                j = min(max(int((y - by) / vp), 0), ny - 1)
                k = min(max(int((z - bz) / vp), 0), nz - 1)
                lab = labels[i, j, k]
                a_ph = _interp_row(mu_ph, lab, e0, de, e)
                a_co = _interp_row(mu_co, lab, e0, de, e)
                a_ra = _interp_row(mu_ra, lab, e0, de, e)
                u = _u01(st) * maj
                if u >= a_ph + a_co + a_ra:
                    continue  # virtual collision
                if u < a_ph:
                    tally[T_DEP0 + lab] += e
                    alive = False
                    break
                phi = 2.0 * math.pi * _u01(st)
                if u < a_ph + a_co:
                    c, e2 = _sample_compton(st, e)
                    tally[T_DEP0 + lab] += e - e2
                    e = e2
                else:
                    c = _sample_rayleigh(st, e, ff_x2, ff_cdf, lab)
                dx, dy, dz = _rotate(dx, dy, dz, c, phi)
                scattered = True
                if e < e0:
                    tally[T_DEP0 + lab] += e
                    alive = False
                    break
        if not alive:
            continue
        if dz >= 0.0:
            tally[T_ESCAPED] += e
            continue
        t = -z / dz
        hx = x + t * dx
        hy = y + t * dy
        if not (x0 <= hx < x0 + dnx * p and y0 <= hy < y0 + dny * p):
            tally[T_ESCAPED] += e
            continue
        if geo[GEO_GRID_ON] != 0.0:
            g = _grid_factor(geo, x, y, z, dx, dz, hx)
            if _u01(st) >= g:
                tally[T_GRID] += e
                continue
        mu_d = _interp(det_mu, e0, de, e)
        pabs = 1.0 - math.exp(-mu_d * se_cm / abs(dz))
        u = _u01(st)
        if u >= pabs:
            tally[T_ESCAPED] += e
            continue
        dep = e
        if fluor and e > SE_K_EDGE and _u01(st) < p_fluor:
            # depth of the photo-absorption below the entrance face, cm
            depth = -math.log(1.0 - u) / mu_d * abs(dz)
            cz = 2.0 * _u01(st) - 1.0
            mu_k = _interp(det_mu, e0, de, SE_KA)
            path = (depth / -cz) if cz < 0 else ((se_cm - depth) / cz if cz > 0 else 1e30)
            if _u01(st) >= 1.0 - math.exp(-mu_k * path):
                dep = e - SE_KA
                tally[T_ESCAPED] += SE_KA
        if not math.isfinite(dep):
            tally[T_BAD] += 1
            return h
        ix = min(int((hx - x0) / p), dnx - 1)
        iy = min(int((hy - y0) / p), dny - 1)
        if scattered:
            scat[ix, iy] += dep
        else:
            prim[ix, iy] += dep
        tally[T_DETECTOR] += dep
        tally[T_HITS] += 1.0
    return -1
