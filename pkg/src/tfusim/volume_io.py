"""Volume and artifact I/O: NIfTI-1, ``.npz`` archives, phantoms, slice images.

The ``.npz`` writer emits NumPy format v1.0 members directly so archives are
byte-for-byte reproducible (fixed ZIP timestamps, little-endian, C order).
"""
from __future__ import annotations

import ast
import gzip
import os
import struct
import tempfile
import zipfile
import zlib
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from .errors import FormatError
from .grid import GridSpec, ScalarField3D

PathLike = Union[str, os.PathLike]

# NIfTI-1 datatype codes accepted on read
NIFTI_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
}
_NIFTI_CODES = {np.dtype(v): k for k, v in NIFTI_DTYPES.items()}

NPY_MAGIC = b"\x93NUMPY"
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


# --------------------------------------------------------------------- NIfTI


def _open_maybe_gzip(path: Path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (EOFError, OSError) as exc:
            raise OSError(f"{path}: truncated or corrupt gzip stream") from exc
    return raw


def read_nifti(path: PathLike, units: str = "HU") -> ScalarField3D:
    """Read a single-file NIfTI-1 volume (``.nii`` or ``.nii.gz``).

    Spacing comes from ``pixdim``; the origin from the qform offset (or the
    sform translation when only an sform is present). No reorientation or
    resampling is done. ``scl_slope``/``scl_inter`` are applied when set.
    """
    path = Path(path)
    raw = _open_maybe_gzip(path)
    if len(raw) < 348:
        raise OSError(f"{path}: file shorter than a NIfTI-1 header")

    for endian in "<>":
        if struct.unpack_from(endian + "i", raw, 0)[0] == 348:
            break
    else:
        raise FormatError(f"{path}: sizeof_hdr is not 348")

    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise FormatError(f"{path}: bad NIfTI magic {magic!r}")
    if magic == b"ni1\x00":
        raise FormatError(f"{path}: two-file (.hdr/.img) NIfTI is not supported")

    dim = struct.unpack_from(endian + "8h", raw, 40)
    ndim = dim[0]
    if ndim < 1 or ndim > 7:
        raise FormatError(f"{path}: invalid dim[0]={ndim}")
    shape = [dim[i] if i <= ndim else 1 for i in range(1, 4)]
    if any(d > 1 for d in dim[4 : ndim + 1]):
        raise FormatError(f"{path}: only single-volume 3D images are supported, dims {dim[1:ndim + 1]}")
    if any(d < 1 for d in shape):
        raise FormatError(f"{path}: non-positive dimension in {shape}")

    datatype = struct.unpack_from(endian + "h", raw, 70)[0]
    if datatype not in NIFTI_DTYPES:
        raise FormatError(f"{path}: unsupported NIfTI datatype code {datatype}")
    dtype = np.dtype(NIFTI_DTYPES[datatype]).newbyteorder(endian)

    pixdim = struct.unpack_from(endian + "8f", raw, 76)
    spacing = tuple(abs(float(p)) if p != 0 else 1.0 for p in pixdim[1:4])
    vox_offset = int(struct.unpack_from(endian + "f", raw, 108)[0])
    slope, inter = struct.unpack_from(endian + "2f", raw, 112)
    qform_code, sform_code = struct.unpack_from(endian + "2h", raw, 252)
    if qform_code > 0:
        origin = struct.unpack_from(endian + "3f", raw, 268)
    elif sform_code > 0:
        srow = struct.unpack_from(endian + "12f", raw, 280)
        origin = (srow[3], srow[7], srow[11])
    else:
        origin = (0.0, 0.0, 0.0)

    count = shape[0] * shape[1] * shape[2]
    nbytes = count * dtype.itemsize
    payload = raw[vox_offset : vox_offset + nbytes]
    if len(payload) < nbytes:
        raise OSError(f"{path}: truncated payload ({len(payload)} of {nbytes} bytes)")

    data = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    if slope != 0.0 and np.isfinite(slope) and not (slope == 1.0 and inter == 0.0):
        data = data * slope + inter
    values = data.reshape(shape, order="F")
    grid = GridSpec(tuple(shape), spacing, tuple(float(o) for o in origin))
    return ScalarField3D(grid, values, units)


def write_nifti(path: PathLike, field: ScalarField3D, dtype=np.float32) -> None:
    """Write ``field`` as a little-endian single-file NIfTI-1 volume.

    The qform and sform both encode a pure scaling plus the grid origin
    (RAS-aligned, no rotation). ``.gz`` suffix triggers gzip compression.
    """
    path = Path(path)
    dtype = np.dtype(dtype)
    if dtype not in _NIFTI_CODES:
        raise ValueError(f"unsupported NIfTI output dtype {dtype}")
    nx, ny, nz = field.grid.dims
    sx, sy, sz = field.grid.spacing
    ox, oy, oz = field.grid.origin

    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, _NIFTI_CODES[dtype], dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, sx, sy, sz, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    hdr[123] = 2  # xyzt_units: mm
    struct.pack_into("<2h", hdr, 252, 1, 1)
    struct.pack_into("<3f", hdr, 256, 0.0, 0.0, 0.0)  # quatern b, c, d
    struct.pack_into("<3f", hdr, 268, ox, oy, oz)
    struct.pack_into("<4f", hdr, 280, sx, 0.0, 0.0, ox)
    struct.pack_into("<4f", hdr, 296, 0.0, sy, 0.0, oy)
    struct.pack_into("<4f", hdr, 312, 0.0, 0.0, sz, oz)
    hdr[344:348] = b"n+1\x00"

    data = np.asarray(field.values).astype(dtype.newbyteorder("<")).ravel(order="F")
    blob = bytes(hdr) + b"\x00" * 4 + data.tobytes()
    if path.suffix == ".gz":
        blob = gzip.compress(blob, mtime=0)
    _atomic_write_bytes(path, blob)


# ----------------------------------------------------------------------- npz


def _npy_header(array: np.ndarray) -> bytes:
    descr = array.dtype.str
    shape = tuple(int(s) for s in array.shape)
    body = "{'descr': %r, 'fortran_order': False, 'shape': %r, }" % (descr, shape)
    # magic(6) + version(2) + length(2) + body + padding + '\n', aligned to 64
    total = 10 + len(body) + 1
    pad = (64 - total % 64) % 64
    body = body + " " * pad + "\n"
    if len(body) > 0xFFFF:
        raise ValueError("array header too large for .npy format v1.0")
    return NPY_MAGIC + b"\x01\x00" + struct.pack("<H", len(body)) + body.encode("latin1")


def _to_npy_array(array) -> np.ndarray:
    array = np.asarray(array)
    if array.dtype.hasobject:
        raise ValueError("object arrays cannot be stored")
    if array.dtype.byteorder == ">" or (array.dtype.byteorder == "=" and not np.little_endian):
        array = array.astype(array.dtype.newbyteorder("<"))
    # ascontiguousarray would promote 0-d arrays to shape (1,)
    return array if array.flags.c_contiguous else array.copy(order="C")


def npy_bytes(array) -> bytes:
    """Serialise one array in NumPy ``.npy`` format v1.0."""
    array = _to_npy_array(array)
    return _npy_header(array) + array.tobytes(order="C")


def parse_npy(blob: bytes, name: str = "<array>") -> np.ndarray:
    if blob[:6] != NPY_MAGIC:
        raise FormatError(f"{name}: missing .npy magic")
    major = blob[6]
    if major == 1:
        hlen = struct.unpack_from("<H", blob, 8)[0]
        start = 10
    elif major in (2, 3):
        hlen = struct.unpack_from("<I", blob, 8)[0]
        start = 12
    else:
        raise FormatError(f"{name}: unsupported .npy version {major}")
    try:
        header = ast.literal_eval(blob[start : start + hlen].decode("latin1"))
        dtype = np.dtype(header["descr"])
        shape = tuple(header["shape"])
        fortran = bool(header["fortran_order"])
    except (ValueError, SyntaxError, KeyError, TypeError) as exc:
        raise FormatError(f"{name}: malformed .npy header") from exc
    data = blob[start + hlen :]
    count = int(np.prod(shape, dtype=np.int64))
    if len(data) < count * dtype.itemsize:
        raise FormatError(f"{name}: payload shorter than header promises")
    arr = np.frombuffer(data, dtype=dtype, count=count)
    arr = arr.reshape(shape, order="F" if fortran else "C")
    return arr.copy()


def _entry_pairs(entries) -> list:
    pairs = list(entries.items()) if isinstance(entries, Mapping) else list(entries)
    seen = set()
    for name, _ in pairs:
        if not isinstance(name, str) or not name:
            raise ValueError("npz entry names must be non-empty strings")
        if name in seen:
            raise ValueError(f"duplicate npz entry name {name!r}")
        seen.add(name)
    return pairs


def write_npz(path: PathLike, entries, compress: bool = False) -> None:
    """Write named arrays to a ZIP of ``.npy`` members, atomically.

    ``entries`` is a mapping or an iterable of ``(name, array)`` pairs. The
    archive is first written next to ``path`` and then renamed into place.
    """
    pairs = _entry_pairs(entries)
    method = zipfile.ZIP_DEFLATED if compress else zipfile.ZIP_STORED
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=".npz", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh, zipfile.ZipFile(fh, "w", allowZip64=True) as zf:
            for name, array in pairs:
                info = zipfile.ZipInfo(name + ".npy", date_time=_ZIP_EPOCH)
                info.compress_type = method
                info.external_attr = 0o644 << 16
                zf.writestr(info, npy_bytes(array))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_npz(path: PathLike) -> dict:
    """Read every member of an ``.npz`` archive (stored or deflated)."""
    try:
        zf = zipfile.ZipFile(path, "r")
    except zipfile.BadZipFile as exc:
        raise FormatError(f"{path}: not a readable ZIP archive") from exc
    out = {}
    with zf:
        for info in zf.infolist():
            name = info.filename
            key = name[:-4] if name.endswith(".npy") else name
            try:
                blob = zf.read(info)
            except (zipfile.BadZipFile, zlib.error) as exc:
                raise FormatError(f"{path}: corrupt member {name}") from exc
            out[key] = parse_npy(blob, name)
    return out


def _atomic_write_bytes(path: Path, blob: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ------------------------------------------------------------------ phantoms


def make_skull_phantom(
    grid: GridSpec, outer_radius: float, thickness: float, skull_hu: float = 1700.0
) -> ScalarField3D:
    """Spherical shell of ``skull_hu`` centred on the grid, zero elsewhere.

    Voxels whose centre distance r satisfies ``R - t <= r <= R`` are bone.
    """
    if not 0 < thickness < outer_radius:
        raise ValueError(f"need 0 < thickness < outer_radius, got {thickness}, {outer_radius}")
    half = (np.asarray(grid.dims) - 1) / 2.0 * np.asarray(grid.spacing)
    if outer_radius > half.min():
        raise ValueError(
            f"shell radius {outer_radius} mm exceeds grid half-extent {half.min():.3f} mm"
        )
    r = _radius_from_center(grid)
    inner = outer_radius - thickness
    values = np.where((r >= inner) & (r <= outer_radius), float(skull_hu), 0.0)
    return ScalarField3D(grid, values, "HU")


def _radius_from_center(grid: GridSpec) -> np.ndarray:
    axes = [
        (np.arange(n) - (n - 1) / 2.0) * s for n, s in zip(grid.dims, grid.spacing)
    ]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    return np.sqrt(x * x + y * y + z * z)


# ------------------------------------------------------------ preprocessing


def minmax_normalize(field: ScalarField3D) -> ScalarField3D:
    """Scale to [0, 1]; a constant field maps to all zeros."""
    v = field.values.astype(np.float64)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return field.with_values(np.zeros_like(v), "dimensionless")
    return field.with_values((v - lo) / (hi - lo), "dimensionless")


def log_compress(field: ScalarField3D) -> ScalarField3D:
    """Elementwise ``log(1 + x)``. Negative input is rejected."""
    v = field.values.astype(np.float64)
    if np.any(v < 0):
        raise ValueError("log_compress requires non-negative values")
    return field.with_values(np.log1p(v), "dimensionless")


def normalize_pressure(field: ScalarField3D, log: bool = True) -> ScalarField3D:
    """Divide by the maximum, then optionally apply ``log(1 + x)``."""
    peak = float(field.values.max())
    if peak <= 0:
        raise ValueError("pressure field has no positive maximum")
    out = field.with_values(field.values.astype(np.float64) / peak, "dimensionless")
    return log_compress(out) if log else out


# -------------------------------------------------------------------- images

_AXES = {"x": 0, "y": 1, "z": 2}


def slice_array(values: np.ndarray, axis: str, index: int) -> np.ndarray:
    """Return the 2D slice as an image array ``img[row, col]``.

    Columns follow the first remaining axis and rows the second, so a voxel
    at in-plane coordinates ``(u, v)`` lands in pixel ``img[v, u]``.
    """
    if axis not in _AXES:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
    ax = _AXES[axis]
    n = values.shape[ax]
    if not 0 <= index < n:
        raise ValueError(f"slice index {index} out of range [0, {n}) along {axis}")
    return np.take(values, index, axis=ax).T


def to_gray8(plane: np.ndarray, color_scale: str = "linear", dynamic_range_db: float = 40.0) -> np.ndarray:
    plane = np.asarray(plane, dtype=np.float64)
    if color_scale == "linear":
        lo, hi = plane.min(), plane.max()
        if hi == lo:
            return np.full(plane.shape, 128, dtype=np.uint8)
        scaled = (plane - lo) / (hi - lo)
    elif color_scale == "log":
        mag = np.abs(plane)
        peak = mag.max()
        if peak == 0:
            return np.full(plane.shape, 128, dtype=np.uint8)
        db = 20.0 * np.log10(np.maximum(mag / peak, 10 ** (-dynamic_range_db / 20.0)))
        scaled = 1.0 + db / dynamic_range_db
    else:
        raise ValueError(f"color_scale must be 'linear' or 'log', got {color_scale!r}")
    return np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path: PathLike, image: np.ndarray) -> None:
    image = np.ascontiguousarray(image, dtype=np.uint8)
    h, w = image.shape
    _atomic_write_bytes(Path(path), b"P5\n%d %d\n255\n" % (w, h) + image.tobytes())


def read_pgm(path: PathLike) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(maxsplit=4)
    if parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM supported")
    return np.frombuffer(blob[-w * h :], dtype=np.uint8).reshape(h, w)


def export_slice_image(
    field: ScalarField3D | np.ndarray,
    axis: str,
    index: int,
    path: PathLike,
    color_scale: str = "linear",
) -> None:
    """Write one slice as an 8-bit grayscale image.

    ``.png`` paths go through Pillow; anything else is written as PGM (P5).
    """
    values = field.values if isinstance(field, ScalarField3D) else np.asarray(field)
    image = to_gray8(slice_array(values, axis, index), color_scale)
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(image, mode="L").save(path)
    else:
        write_pgm(path, image)
