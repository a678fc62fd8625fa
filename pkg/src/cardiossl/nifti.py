"""Minimal NIfTI-1 reader/writer.

Covers exactly what this package stores: little-endian single-file
volumes (.nii / .nii.gz) of 2 or 3 dimensions in the dtypes below.
Written files are deterministic byte-for-byte (gzip mtime pinned to 0)
so regenerating a cohort with the same seed reproduces identical files.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

_DTYPE_CODES = {
    np.dtype(np.uint8): (2, 8),
    np.dtype(np.int16): (4, 16),
    np.dtype(np.int32): (8, 32),
    np.dtype(np.float32): (16, 32),
    np.dtype(np.float64): (64, 64),
}
_CODE_DTYPES = {code: dt for dt, (code, _) in _DTYPE_CODES.items()}


def _storage_dtype(data: np.ndarray) -> np.ndarray:
    if data.dtype in _DTYPE_CODES:
        return data
    if data.dtype == np.bool_:
        return data.astype(np.uint8)
    if data.dtype.kind == "i":
        out = data.astype(np.int32)
        if not np.array_equal(out, data):
            raise FormatError(f"integer data does not fit int32 storage ({data.dtype})")
        return out
    if data.dtype.kind == "f":
        return data.astype(np.float32)
    raise FormatError(f"unsupported dtype {data.dtype} for NIfTI storage")


def write_nifti(path, data: np.ndarray, spacing=None, affine=None) -> None:
    """Write a 2D or 3D array as a single-file NIfTI-1 volume.

    ``spacing`` is mm per voxel along each array axis; ``affine`` an
    optional 4x4 voxel-to-world matrix stored as the sform.
    """
    data = _storage_dtype(np.asarray(data))
    if data.ndim not in (2, 3):
        raise FormatError(f"only 2D/3D volumes supported, got ndim={data.ndim}")
    if spacing is None:
        spacing = (1.0,) * data.ndim
    if affine is None:
        affine = np.diag(list(spacing) + [1.0] * (4 - data.ndim))
        affine[3, 3] = 1.0
    affine = np.asarray(affine, dtype=np.float32)

    code, bitpix = _DTYPE_CODES[data.dtype]
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    dim = [data.ndim] + list(data.shape) + [1] * (7 - data.ndim)
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, bitpix)
    pixdim = [1.0] + [float(s) for s in spacing] + [1.0] * (7 - data.ndim)
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)      # scl_slope, scl_inter
    struct.pack_into("<B", hdr, 123, 2)              # xyzt_units: mm
    struct.pack_into("<2h", hdr, 252, 0, 1)          # qform off, sform on
    struct.pack_into("<12f", hdr, 280, *affine[:3, :].ravel())
    hdr[344:348] = MAGIC

    payload = bytes(hdr) + b"\x00\x00\x00\x00" + np.asfortranarray(data).tobytes(order="F")
    path = Path(path)
    if path.suffix == ".gz":
        with open(path, "wb") as f:
            # pin filename and mtime so identical data gives identical bytes
            with gzip.GzipFile(filename="", fileobj=f, mode="wb", mtime=0) as gz:
                gz.write(payload)
    else:
        path.write_bytes(payload)


def read_nifti(path):
    """Read a NIfTI-1 volume written by this package (or compatible).

    Returns (data, meta) where meta has "spacing" and "affine".
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except OSError as exc:
            raise FormatError(f"corrupt gzip stream in {path}: {exc}") from exc
    if len(raw) < VOX_OFFSET:
        raise FormatError(f"{path} too short to hold a NIfTI-1 header")

    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        raise FormatError(f"{path}: bad sizeof_hdr {sizeof_hdr} (big-endian files unsupported)")
    if raw[344:348] not in (MAGIC, b"ni1\x00"):
        raise FormatError(f"{path}: bad NIfTI magic {raw[344:348]!r}")
    if raw[344:348] == b"ni1\x00":
        raise FormatError(f"{path}: two-file (.hdr/.img) NIfTI unsupported")

    dim = struct.unpack_from("<8h", raw, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise FormatError(f"{path}: bad dim[0]={ndim}")
    shape = tuple(int(d) for d in dim[1:1 + ndim])
    while len(shape) > 2 and shape[-1] == 1:
        shape = shape[:-1]
    if len(shape) > 3:
        raise FormatError(f"{path}: >3 non-singleton dimensions unsupported ({shape})")

    (code,) = struct.unpack_from("<h", raw, 70)
    if code not in _CODE_DTYPES:
        raise FormatError(f"{path}: unsupported NIfTI datatype code {code}")
    dtype = _CODE_DTYPES[code]
    pixdim = struct.unpack_from("<8f", raw, 76)
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    slope, inter = struct.unpack_from("<2f", raw, 112)
    srow = np.array(struct.unpack_from("<12f", raw, 280)).reshape(3, 4)

    n = int(np.prod(shape))
    start = int(vox_offset)
    end = start + n * dtype.itemsize
    if end > len(raw):
        raise FormatError(f"{path}: truncated data section ({len(raw)} < {end} bytes)")
    data = np.frombuffer(raw[start:end], dtype=dtype).reshape(shape, order="F").copy()
    if slope not in (0.0, 1.0) or inter != 0.0:
        data = data.astype(np.float32) * (slope or 1.0) + inter

    affine = np.eye(4)
    affine[:3, :] = srow
    meta = {"spacing": tuple(float(p) for p in pixdim[1:1 + len(shape)]),
            "affine": affine}
    return data, meta
