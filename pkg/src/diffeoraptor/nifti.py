"""Single-file NIfTI-1 (.nii / .nii.gz) reading and writing.

Only what the registration pipeline needs: scalar volumes, label maps and
displacement fields (5D, intent code 1006, vectors in millimetres).
Orientation matrices are written as a plain scaling plus offset and are
not used for resampling on read.
"""

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import NiftiParseError, StructuralError, UnsupportedFormatError
from .volume import DisplacementField, LabelMap, Volume

HEADER_SIZE = 348
DATA_OFFSET = 352
INTENT_DISPVECT = 1006
FLOAT32 = 16

DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
    1024: np.int64,
    1280: np.uint64,
}

# byte offsets of the header fields we touch
_DIM = 40
_INTENT_CODE = 68
_DATATYPE = 70
_PIXDIM = 76
_VOX_OFFSET = 108
_SCL_SLOPE = 112
_XYZT_UNITS = 123
_DESCRIP = 148
_QFORM_CODE = 252
_QUATERN = 256
_SROW = 280
_MAGIC = 344


@dataclass(frozen=True, eq=False)
class NiftiImage:
    """Decoded image array (NIfTI axis order) plus the geometry we use."""

    data: np.ndarray
    spacing: tuple
    origin: tuple
    intent_code: int
    datatype: int


def _read_bytes(path):
    path = os.fspath(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise NiftiParseError(f"corrupt gzip stream in {path}: {exc}", 0) from exc
    return raw


def _endian(raw):
    for order in ("<", ">"):
        if struct.unpack_from(order + "i", raw, 0)[0] == HEADER_SIZE:
            return order
    raise NiftiParseError(f"sizeof_hdr is not {HEADER_SIZE} in either byte order", 0)


def parse_nifti(raw):
    """Decode an in-memory NIfTI-1 single-file image."""
    if len(raw) < HEADER_SIZE:
        raise NiftiParseError(f"truncated header: {len(raw)} of {HEADER_SIZE} bytes", len(raw))
    order = _endian(raw)
    magic = raw[_MAGIC:_MAGIC + 4]
    if magic == b"ni1\x00":
        raise NiftiParseError("header/image pairs (.hdr/.img) are not supported", _MAGIC)
    if magic != b"n+1\x00":
        raise NiftiParseError(f"bad magic {magic!r}", _MAGIC)
    dim = struct.unpack_from(order + "8h", raw, _DIM)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise NiftiParseError(f"dim[0] = {ndim} is outside 1..7", _DIM)
    shape = dim[1:ndim + 1]
    for i, n in enumerate(shape):
        if n < 1:
            raise NiftiParseError(f"dim[{i + 1}] = {n} is not positive", _DIM + 2 * (i + 1))
    intent_code, datatype = struct.unpack_from(order + "2h", raw, _INTENT_CODE)
    if datatype not in DTYPES:
        raise UnsupportedFormatError(datatype)
    pixdim = struct.unpack_from(order + "8f", raw, _PIXDIM)
    vox_offset = struct.unpack_from(order + "f", raw, _VOX_OFFSET)[0]
    if not np.isfinite(vox_offset) or vox_offset < DATA_OFFSET or vox_offset != int(vox_offset):
        raise NiftiParseError(f"vox_offset {vox_offset} is invalid for a single-file image", _VOX_OFFSET)
    slope, inter = struct.unpack_from(order + "2f", raw, _SCL_SLOPE)
    dtype = np.dtype(DTYPES[datatype]).newbyteorder(order)
    count = int(np.prod(shape))
    start = int(vox_offset)
    needed = start + count * dtype.itemsize
    if len(raw) < needed:
        raise NiftiParseError(f"data block truncated: need {needed} bytes, file has {len(raw)}", len(raw))
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=start).reshape(shape, order="F")
    data = data.astype(np.float64)
    if slope != 0 and np.isfinite(slope) and np.isfinite(inter) and (slope, inter) != (1.0, 0.0):
        data = data * slope + inter
    spacing = tuple(abs(float(p)) if p != 0 else 1.0 for p in pixdim[1:4])
    qform_code, sform_code = struct.unpack_from(order + "2h", raw, _QFORM_CODE)
    if qform_code > 0:
        origin = struct.unpack_from(order + "3f", raw, _QUATERN + 12)
    elif sform_code > 0:
        srow = struct.unpack_from(order + "12f", raw, _SROW)
        origin = (srow[3], srow[7], srow[11])
    else:
        origin = (0.0, 0.0, 0.0)
    return NiftiImage(data, spacing, tuple(float(o) for o in origin), int(intent_code), int(datatype))


def read_nifti(path):
    return parse_nifti(_read_bytes(path))


def _header(shape, spacing, origin, intent_code=0, description=""):
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    dim = [len(shape)] + list(shape) + [1] * (7 - len(shape))
    struct.pack_into("<8h", hdr, _DIM, *dim)
    struct.pack_into("<4h", hdr, _INTENT_CODE, intent_code, FLOAT32, 32, 0)
    pixdim = [1.0] + list(spacing) + [1.0] * 4
    struct.pack_into("<8f", hdr, _PIXDIM, *pixdim)
    struct.pack_into("<3f", hdr, _VOX_OFFSET, float(DATA_OFFSET), 1.0, 0.0)
    hdr[_XYZT_UNITS] = 2  # millimetres
    hdr[_DESCRIP:_DESCRIP + 80] = description.encode("ascii", "replace")[:79].ljust(80, b"\x00")
    struct.pack_into("<2h", hdr, _QFORM_CODE, 1, 1)
    struct.pack_into("<6f", hdr, _QUATERN, 0.0, 0.0, 0.0, *origin)
    sx, sy, sz = spacing
    ox, oy, oz = origin
    struct.pack_into("<12f", hdr, _SROW, sx, 0, 0, ox, 0, sy, 0, oy, 0, 0, sz, oz)
    hdr[_MAGIC:_MAGIC + 4] = b"n+1\x00"
    return bytes(hdr)


def write_nifti(path, data, spacing, origin, intent_code=0, description=""):
    """Write ``data`` (NIfTI axis order) as float32; gzip when the name ends in ``.gz``."""
    path = os.fspath(path)
    data = np.asarray(data, dtype="<f4")
    payload = _header(data.shape, spacing, origin, intent_code, description)
    payload += b"\x00" * (DATA_OFFSET - HEADER_SIZE) + data.tobytes(order="F")
    if path.endswith(".gz"):
        payload = gzip.compress(payload, mtime=0)
    tmp = path + ".partial"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def _squeeze_3d(img, path):
    data = img.data
    while data.ndim > 3 and data.shape[-1] == 1:
        data = data[..., 0]
    if data.ndim != 3:
        raise StructuralError(f"{path}: expected a 3D scalar image, got shape {img.data.shape}")
    return data


def read_volume(path):
    img = read_nifti(path)
    return Volume(_squeeze_3d(img, path), img.spacing, img.origin)


def write_volume(v, path, description=""):
    write_nifti(path, v.data, v.spacing, v.origin, description=description)


def read_labels(path):
    img = read_nifti(path)
    return LabelMap(np.rint(_squeeze_3d(img, path)).astype(np.int64), img.spacing, img.origin)


def write_labels(m, path):
    write_nifti(path, m.data, m.spacing, m.origin, description="labels")


def write_displacement(d, path):
    """Store as ``(ni, nj, nk, 1, 3)`` with intent 1006; vectors converted to millimetres."""
    mm = d.data * np.asarray(d.spacing).reshape(3, 1, 1, 1)
    write_nifti(path, np.moveaxis(mm, 0, -1)[:, :, :, None, :], d.spacing, d.origin, INTENT_DISPVECT,
                "inverse map displacement (mm)")


def read_displacement(path):
    img = read_nifti(path)
    data = img.data
    if data.ndim == 5 and data.shape[3] == 1:
        data = data[:, :, :, 0, :]
    if data.ndim != 4 or data.shape[-1] != 3:
        raise StructuralError(f"{path}: expected a (ni, nj, nk, 1, 3) vector image, got shape {img.data.shape}")
    vox = np.moveaxis(data, -1, 0) / np.asarray(img.spacing).reshape(3, 1, 1, 1)
    return DisplacementField(vox, img.spacing, img.origin)


__all__ = [
    "NiftiImage",
    "parse_nifti",
    "read_displacement",
    "read_labels",
    "read_nifti",
    "read_volume",
    "write_displacement",
    "write_labels",
    "write_nifti",
    "write_volume",
]
