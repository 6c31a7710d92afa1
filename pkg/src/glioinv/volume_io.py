"""Reader and writer for the GLF1 raw volume format.

Layout (all little-endian)::

    8 bytes   magic b"GLIOF1\\0\\0"
    u32       ndims
    u32 x nd  dims
    u32       components
    f64 x nd  spacing
    f64 x nd  origin
    f64 ...   values, x fastest; multi-component volumes store one full
              volume per component, component index slowest

A component count of 1 is a scalar field, ``ndims`` a vector field and
``ndims*(ndims+1)/2`` a symmetric tensor field in upper-triangle order.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .field import Grid, ScalarField, TensorField, VectorField, n_sym

MAGIC = b"GLIOF1\x00\x00"
MAX_VALUES = 2**31


class VolumeFormatError(ValueError):
    """Raised for malformed or truncated GLF1 files."""


def encode_volume(fld: ScalarField | VectorField | TensorField) -> bytes:
    grid = fld.grid
    values = np.asarray(fld.values, dtype="<f8")
    comps = 1 if values.ndim == grid.ndim else values.shape[0]
    values = values.reshape((comps, *grid.dims))
    header = MAGIC + struct.pack(f"<I{grid.ndim}II", grid.ndim, *grid.dims, comps)
    header += struct.pack(f"<{2 * grid.ndim}d", *grid.spacing, *grid.origin)
    # x fastest == Fortran order of each (x, y, z) volume
    body = b"".join(np.asfortranarray(v).tobytes(order="F") for v in values)
    return header + body


def decode_volume(buf: bytes) -> ScalarField | VectorField | TensorField:
    if len(buf) < len(MAGIC) or buf[: len(MAGIC)] != MAGIC:
        raise VolumeFormatError("bad magic")
    pos = len(MAGIC)

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise VolumeFormatError("truncated header")
        out = struct.unpack_from(fmt, buf, pos)
        pos += size
        return out

    (ndims,) = take("<I")
    if ndims not in (2, 3):
        raise VolumeFormatError(f"unsupported ndims {ndims}")
    dims = take(f"<{ndims}I")
    (comps,) = take("<I")
    count = comps
    for n in dims:
        count *= n
    if count >= MAX_VALUES or comps == 0:
        raise VolumeFormatError(f"dimension overflow: {dims} x {comps} components")
    spacing = take(f"<{ndims}d")
    origin = take(f"<{ndims}d")
    nbytes = 8 * count
    if len(buf) - pos < nbytes:
        raise VolumeFormatError(f"truncated payload: expected {nbytes} bytes, found {len(buf) - pos}")
    if len(buf) - pos > nbytes:
        raise VolumeFormatError("trailing bytes after payload")
    flat = np.frombuffer(buf, dtype="<f8", count=count, offset=pos)
    vols = [flat[i * (count // comps):(i + 1) * (count // comps)].reshape(dims, order="F") for i in range(comps)]
    try:
        grid = Grid(tuple(dims), spacing, origin)
    except ValueError as exc:
        raise VolumeFormatError(str(exc)) from exc
    if comps == 1:
        return ScalarField(grid, vols[0])
    if comps == ndims:
        return VectorField(grid, np.stack(vols))
    if comps == n_sym(ndims):
        return TensorField(grid, np.stack(vols))
    raise VolumeFormatError(f"component count {comps} fits no field type for {ndims}D")


def save_volume(path: str | os.PathLike, fld: ScalarField | VectorField | TensorField) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_volume(fld))


def load_volume(path: str | os.PathLike) -> ScalarField | VectorField | TensorField:
    with open(path, "rb") as fh:
        return decode_volume(fh.read())
