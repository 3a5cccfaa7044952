"""MetaImage (.mhd header + .raw payload) reader and writer."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import FormatError

MET_TYPES = {
    np.dtype("uint8"): "MET_UCHAR", np.dtype("int8"): "MET_CHAR",
    np.dtype("uint16"): "MET_USHORT", np.dtype("int16"): "MET_SHORT",
    np.dtype("uint32"): "MET_UINT", np.dtype("int32"): "MET_INT",
    np.dtype("uint64"): "MET_ULONG_LONG", np.dtype("int64"): "MET_LONG_LONG",
    np.dtype("float32"): "MET_FLOAT", np.dtype("float64"): "MET_DOUBLE",
}
NP_TYPES = {v: k for k, v in MET_TYPES.items()}


def write_mhd_raw(array, path, spacing=None, extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``path`` (.mhd) and its .raw payload (little-endian, x fastest)."""
    a = np.asarray(array)
    dt = a.dtype.newbyteorder("=") if a.dtype.byteorder not in "=|" else a.dtype
    if dt not in MET_TYPES:
        raise FormatError(f"unsupported element type {a.dtype}")
    path = Path(path)
    if path.suffix != ".mhd":
        path = path.with_suffix(".mhd")
    raw = path.with_suffix(".raw")
    spacing = tuple(float(s) for s in (spacing if spacing is not None else (1.0,) * a.ndim))
    if len(spacing) != a.ndim:
        raise FormatError("spacing needs one value per axis")
    lines = [
        "ObjectType = Image",
        f"NDims = {a.ndim}",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        "CompressedData = False",
        "DimSize = " + " ".join(str(n) for n in a.shape[::-1]),
        "ElementSpacing = " + " ".join(repr(s) for s in spacing[::-1]),
        f"ElementType = {MET_TYPES[dt]}",
    ]
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    lines.append(f"ElementDataFile = {raw.name}")
    path.parent.mkdir(parents=True, exist_ok=True)
    raw.write_bytes(np.ascontiguousarray(a, dtype=dt.newbyteorder("<")).tobytes())
    path.write_text("\n".join(lines) + "\n")
    return path, raw


def read_header(path) -> dict:
    header = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{n}: expected 'key = value'")
        k, v = line.split("=", 1)
        header[k.strip()] = v.strip()
    return header


def read_mhd_raw(path):
    """Return (array, header); array axes follow numpy order (reverse of DimSize)."""
    path = Path(path)
    h = read_header(path)
    try:
        ndims = int(h["NDims"])
        dims = [int(v) for v in h["DimSize"].split()]
        etype = h["ElementType"]
        datafile = h["ElementDataFile"]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: bad or missing header field ({exc})") from None
    if len(dims) != ndims or min(dims, default=0) < 1:
        raise FormatError(f"{path}: DimSize does not match NDims")
    if etype not in NP_TYPES:
        raise FormatError(f"{path}: unsupported ElementType {etype}")
    if h.get("CompressedData", "False").lower() == "true":
        raise FormatError(f"{path}: compressed payloads are not supported")
    msb = h.get("BinaryDataByteOrderMSB", h.get("ElementByteOrderMSB", "False")).lower() == "true"
    dt = NP_TYPES[etype].newbyteorder(">" if msb else "<")
    payload = (path.parent / datafile).read_bytes()
    expect = int(np.prod(dims)) * dt.itemsize
    if len(payload) != expect:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, header implies {expect}")
    a = np.frombuffer(payload, dtype=dt).reshape(dims[::-1]).astype(NP_TYPES[etype])
    return a, h


def spacing_of(header: dict):
    return tuple(float(v) for v in header.get("ElementSpacing", "").split()[::-1])
