import gzip
import io
import zipfile

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from tfusim.errors import FormatError
from tfusim.grid import GridSpec, ScalarField3D
from tfusim.volume_io import (
    NPY_MAGIC, export_slice_image, log_compress, make_skull_phantom, minmax_normalize,
    normalize_pressure, npy_bytes, parse_npy, read_nifti, read_npz, read_pgm, write_nifti,
    write_npz,
)
from oracles import npy_header_fields

nib = pytest.importorskip("nibabel")


def _field(values, spacing=0.5, units="dimensionless"):
    values = np.asarray(values, dtype=float)
    return ScalarField3D(GridSpec(values.shape, (spacing,) * 3), values, units)


# ---------------------------------------------------------------- NIfTI


def _nib_write(path, data, pixdim=(0.5, 0.5, 0.5), affine=None):
    if affine is None:
        affine = np.diag(list(pixdim) + [1.0])
    img = nib.Nifti1Image(data, affine)
    img.header.set_zooms(pixdim)
    nib.save(img, str(path))


def test_read_nifti_int16_constant(tmp_path):
    path = tmp_path / "c.nii"
    _nib_write(path, np.full((4, 4, 4), 300, dtype=np.int16))
    f = read_nifti(path)
    assert f.grid.dims == (4, 4, 4)
    assert f.grid.spacing == (0.5, 0.5, 0.5)
    assert np.all(f.values == 300.0)


def test_wrong_magic_is_format_error(tmp_path):
    path = tmp_path / "bad.nii"
    _nib_write(path, np.zeros((4, 4, 4), dtype=np.int16))
    blob = bytearray(path.read_bytes())
    blob[344:348] = b"abc\x00"
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        read_nifti(path)


def test_not_nifti_at_all(tmp_path):
    path = tmp_path / "x.nii"
    path.write_bytes(b"hello" * 100)
    with pytest.raises(FormatError):
        read_nifti(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.nii"
    _nib_write(path, np.zeros((8, 8, 8), dtype=np.float32))
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(OSError):
        read_nifti(path)


@pytest.mark.parametrize("dtype", [np.uint8, np.int16, np.int32, np.float32, np.float64])
@pytest.mark.parametrize("suffix", [".nii", ".nii.gz"])
def test_nibabel_fixture_matches(tmp_path, rng, dtype, suffix):
    data = (rng.random((7, 5, 6)) * 100).astype(dtype)
    path = tmp_path / ("ref" + suffix)
    _nib_write(path, data, pixdim=(0.7, 0.8, 0.9), affine=np.array(
        [[0.7, 0, 0, -10.0], [0, 0.8, 0, 5.0], [0, 0, 0.9, 2.5], [0, 0, 0, 1]]))
    f = read_nifti(path)
    np.testing.assert_array_equal(f.values, data.astype(np.float64))
    np.testing.assert_allclose(f.grid.spacing, (0.7, 0.8, 0.9), rtol=1e-6)
    np.testing.assert_allclose(f.grid.origin, (-10.0, 5.0, 2.5), rtol=1e-6)


def test_scl_slope_applied(tmp_path):
    raw = np.arange(8, dtype=np.int16).reshape(2, 2, 2)
    path = tmp_path / "s.nii"
    _nib_write(path, raw)
    blob = bytearray(path.read_bytes())
    blob[112:120] = np.array([2.0, -1024.0], dtype="<f4").tobytes()  # scl_slope, scl_inter
    path.write_bytes(bytes(blob))
    f = read_nifti(path)
    np.testing.assert_array_equal(f.values, raw * 2.0 - 1024.0)
    np.testing.assert_array_equal(f.values, nib.load(str(path)).get_fdata())


def test_write_nifti_read_by_nibabel(tmp_path, rng):
    grid = GridSpec((5, 6, 7), (0.5, 0.6, 0.7), origin=(1.0, -2.0, 3.0))
    f = ScalarField3D(grid, rng.normal(size=grid.dims) * 1000, "HU")
    path = tmp_path / "w.nii.gz"
    write_nifti(path, f)
    img = nib.load(str(path))
    np.testing.assert_allclose(np.asarray(img.dataobj), f.values.astype(np.float32))
    np.testing.assert_allclose(img.header.get_zooms()[:3], grid.spacing, rtol=1e-6)
    np.testing.assert_allclose(img.affine[:3, 3], grid.origin, rtol=1e-6)


@given(
    dims=st.tuples(*[st.integers(1, 6)] * 3),
    spacing=st.floats(0.1, 3.0),
    seed=st.integers(0, 2**32 - 1),
)
def test_nifti_roundtrip_preserves_checksum(tmp_path_factory, dims, spacing, seed):
    values = np.random.default_rng(seed).normal(size=dims).astype(np.float32)
    f = ScalarField3D(GridSpec(dims, (spacing,) * 3, (0.5, 1.5, -2.0)), values, "HU")
    path = tmp_path_factory.mktemp("rt") / "f.nii"
    write_nifti(path, f)
    g = read_nifti(path)
    write_nifti(path, g)
    h = read_nifti(path)
    assert h.grid.dims == f.grid.dims
    np.testing.assert_allclose(h.grid.spacing, f.grid.spacing, rtol=1e-6)
    np.testing.assert_allclose(h.grid.origin, f.grid.origin, rtol=1e-6)
    assert h.values.astype(np.float32).tobytes() == values.tobytes()


# ------------------------------------------------------------------ npz


def test_npz_roundtrip_small(tmp_path):
    path = tmp_path / "a.npz"
    write_npz(path, {"p": np.zeros((2, 2), np.float32)})
    out = read_npz(path)
    assert out["p"].dtype == np.float32 and out["p"].shape == (2, 2)
    assert np.all(out["p"] == 0)


def test_npy_header_matches_format_v1(rng):
    a = rng.normal(size=(3, 4)).astype(np.float32)
    blob = npy_bytes(a)
    assert blob[:6] == bytes([0x93, 0x4E, 0x55, 0x4D, 0x50, 0x59])
    assert blob[:6] == NPY_MAGIC
    fields = npy_header_fields(blob)
    assert (fields["major"], fields["minor"]) == (1, 0)
    header = fields["header"]
    assert header == {"descr": "<f4", "fortran_order": False, "shape": (3, 4)}
    offset = 10 + fields["header_len"]
    assert offset % 64 == 0
    assert blob[offset - 1:offset] == b"\n"
    assert blob[offset:] == a.tobytes()
    # numpy's own writer produces the same bytes
    ref = io.BytesIO()
    np.save(ref, a)
    assert ref.getvalue() == blob


def test_npz_members_start_with_magic(tmp_path):
    path = tmp_path / "m.npz"
    write_npz(path, {"a": np.arange(4.0), "b": np.ones((2, 2), np.int16)})
    with zipfile.ZipFile(path) as zf:
        for name in zf.namelist():
            assert zf.read(name)[:6] == b"\x93NUMPY"


def test_dataset_layout_accepted(tmp_path, rng):
    n = 16  # full-size members are 256^3; layout is what matters here
    entries = {
        "ct_crop": rng.normal(size=(n, n, n)).astype(np.float32),
        "pressure": rng.random((n, n, n)).astype(np.float32),
        "transducer_coords": rng.normal(size=(500, 3)),
    }
    path = tmp_path / "sample.npz"
    np.savez_compressed(path, **entries)
    out = read_npz(path)
    assert set(out) == {"ct_crop", "pressure", "transducer_coords"}
    for k in entries:
        assert out[k].tobytes() == entries[k].tobytes()


def test_reader_accepts_stored_and_deflated(tmp_path):
    a = np.arange(100, dtype=np.float64)
    for compress in (False, True):
        path = tmp_path / f"c{int(compress)}.npz"
        write_npz(path, {"a": a}, compress=compress)
        np.testing.assert_array_equal(np.load(path)["a"], a)
        np.testing.assert_array_equal(read_npz(path)["a"], a)


def test_npz_rejects_bad_names(tmp_path):
    with pytest.raises(ValueError):
        write_npz(tmp_path / "x.npz", [("a", np.zeros(1)), ("a", np.zeros(1))])
    with pytest.raises(ValueError):
        write_npz(tmp_path / "x.npz", {"": np.zeros(1)})


def test_read_npz_not_a_zip(tmp_path):
    path = tmp_path / "no.npz"
    path.write_bytes(b"definitely not a zip")
    with pytest.raises(FormatError):
        read_npz(path)


def test_npz_writes_are_reproducible(tmp_path):
    a = np.linspace(0, 1, 50, dtype=np.float32).reshape(5, 10)
    write_npz(tmp_path / "1.npz", {"a": a}, compress=True)
    write_npz(tmp_path / "2.npz", {"a": a}, compress=True)
    assert (tmp_path / "1.npz").read_bytes() == (tmp_path / "2.npz").read_bytes()


_dtypes = st.sampled_from(["<f4", "<f8", "<i2", "<i4", "<i8", "|u1", "|b1", ">f8", "<c16"])


@given(arr=_dtypes.flatmap(lambda dt: hnp.arrays(
    np.dtype(dt), hnp.array_shapes(min_dims=0, max_dims=4, max_side=5))),
    compress=st.booleans())
def test_npz_roundtrip_bit_exact(tmp_path_factory, arr, compress):
    path = tmp_path_factory.mktemp("npz") / "a.npz"
    write_npz(path, {"x": arr}, compress=compress)
    ours = read_npz(path)["x"]
    ref = np.load(path)["x"]
    for got in (ours, ref):
        assert got.shape == arr.shape
        assert got.dtype.newbyteorder("=") == arr.dtype.newbyteorder("=")
        assert got.astype(arr.dtype).tobytes() == arr.tobytes()


@given(arr=hnp.arrays(np.float64, hnp.array_shapes(max_dims=3, max_side=4)))
def test_parse_npy_inverts_npy_bytes(arr):
    back = parse_npy(npy_bytes(arr))
    assert back.tobytes() == np.ascontiguousarray(arr).tobytes()


# -------------------------------------------------------------- phantom


def test_phantom_center_and_shell():
    grid = GridSpec.cube(64, 0.5)
    ph = make_skull_phantom(grid, 12.0, 3.0, 1700)
    assert ph.values[31, 31, 31] == 0.0 and ph.values[32, 32, 32] == 0.0
    # voxel whose centre is ~10.5 mm from the grid centre
    centre = (np.array(grid.dims) - 1) / 2
    r = np.linalg.norm((np.array([52, 31, 31]) - centre) * 0.5)
    assert abs(r - 10.5) < 0.3
    assert ph.values[52, 31, 31] == 1700.0


def test_phantom_thickness_zero_rejected():
    with pytest.raises(ValueError):
        make_skull_phantom(GridSpec.cube(64, 0.5), 12.0, 0.0)


def test_phantom_too_large_rejected():
    with pytest.raises(ValueError):
        make_skull_phantom(GridSpec.cube(32, 0.5), 12.0, 2.0)


@pytest.mark.parametrize("R,t", [(12.0, 3.0), (14.0, 2.0), (10.0, 4.0)])
def test_phantom_volume_matches_shell(R, t):
    ph = make_skull_phantom(GridSpec.cube(64, 0.5), R, t, 1700)
    expected = 4.0 / 3.0 * np.pi * (R**3 - (R - t) ** 3) / 0.5**3
    count = np.count_nonzero(ph.values)
    assert abs(count - expected) / expected < 0.05


@given(n=st.integers(16, 40), axis=st.integers(0, 2))
def test_phantom_mirror_symmetric(n, axis):
    grid = GridSpec.cube(n, 0.5)
    half = (n - 1) / 2 * 0.5
    ph = make_skull_phantom(grid, half * 0.9, half * 0.3, 1700).values
    np.testing.assert_array_equal(ph, np.flip(ph, axis=axis))


# -------------------------------------------------------- preprocessing


def test_minmax_examples():
    np.testing.assert_allclose(minmax_normalize(_field([[[0, 5, 10]]])).values.ravel(), [0, 0.5, 1])
    np.testing.assert_allclose(minmax_normalize(_field([[[-2, 0, 2]]])).values.ravel(), [0, 0.5, 1])
    assert np.all(minmax_normalize(_field(np.full((2, 2, 2), 7.0))).values == 0)


def test_log_compress_examples():
    out = log_compress(_field([[[0.0, np.e - 1]]])).values.ravel()
    assert out[0] == 0.0
    assert abs(out[1] - 1.0) < 1e-15
    with pytest.raises(ValueError):
        log_compress(_field([[[-1.0]]]))


def test_normalize_pressure_order():
    p = _field(np.array([[[0.0, 2.0, 8.0]]]), units="Pa")
    np.testing.assert_allclose(normalize_pressure(p).values.ravel(), np.log1p([0, 0.25, 1.0]))
    np.testing.assert_allclose(normalize_pressure(p, log=False).values.ravel(), [0, 0.25, 1.0])


_fields = hnp.arrays(np.float64, st.tuples(*[st.integers(1, 5)] * 3),
                     elements=st.floats(-1e3, 1e3))


@given(v=_fields)
def test_minmax_range_and_idempotent(v):
    out = minmax_normalize(_field(v)).values
    assert out.min() >= 0 and out.max() <= 1
    if v.max() > v.min():
        again = minmax_normalize(_field(out)).values
        np.testing.assert_allclose(again, out, atol=1e-12)


@given(v=_fields.map(np.abs))
def test_monotone_transforms_keep_argmax(v):
    f = _field(v)
    assert log_compress(f).argmax() == f.argmax()
    assert minmax_normalize(f).argmax() == f.argmax()


@given(a=st.floats(0, 1e6), b=st.floats(0, 1e6))
def test_log_compress_strictly_increasing(a, b):
    if a == b:
        return
    lo, hi = min(a, b), max(a, b)
    out = log_compress(_field([[[lo, hi]]])).values.ravel()
    assert out[0] < out[1] or np.log1p(lo) == np.log1p(hi)


# --------------------------------------------------------------- images


def test_constant_slice_is_mid_gray(tmp_path):
    f = _field(np.full((6, 5, 4), 3.0))
    export_slice_image(f, "z", 1, tmp_path / "c.pgm")
    img = read_pgm(tmp_path / "c.pgm")
    assert img.shape == (5, 6)  # height = Ny, width = Nx
    assert np.all(img == 128)


def test_slice_index_out_of_range(tmp_path):
    with pytest.raises(ValueError):
        export_slice_image(_field(np.zeros((64, 64, 64))), "z", 64, tmp_path / "x.pgm")


@pytest.mark.parametrize("suffix", [".pgm", ".png"])
def test_delta_lands_on_one_pixel(tmp_path, suffix):
    v = np.zeros((64, 64, 64))
    v[10, 20, 32] = 1.0
    path = tmp_path / ("d" + suffix)
    export_slice_image(_field(v), "z", 32, path)
    if suffix == ".png":
        from PIL import Image

        img = np.asarray(Image.open(path))
    else:
        img = read_pgm(path)
    assert img[20, 10] == 255  # pixel (x=10, y=20)
    assert np.count_nonzero(img) == 1


def test_log_scale_image(tmp_path):
    v = np.zeros((8, 8, 3))
    v[..., 1] = np.logspace(-3, 0, 64).reshape(8, 8)
    export_slice_image(_field(v), "z", 1, tmp_path / "l.pgm", "log")
    img = read_pgm(tmp_path / "l.pgm")
    assert img.max() == 255 and img.min() == 0
