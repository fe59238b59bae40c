import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from tfusim.grid import GridSpec, ScalarField3D
from tfusim.medium import (
    AcousticMedium, HuMappingParams, build_medium, density_to_sound_speed, hu_to_absorption,
    hu_to_density, resample_isotropic,
)
from tfusim.volume_io import make_skull_phantom

P = HuMappingParams()


def _ct(values, spacing=0.5):
    values = np.asarray(values, dtype=float)
    return ScalarField3D(GridSpec(values.shape, (spacing,) * 3), values, "HU")


def test_density_examples():
    assert hu_to_density(2000) == 1900.0
    assert hu_to_density(0) == 1000.0
    assert hu_to_density(1000) == 1450.0


def test_sound_speed_examples():
    assert density_to_sound_speed(1000) == 1500.0
    assert density_to_sound_speed(1900) == 3100.0
    assert density_to_sound_speed(1450) == 2300.0


def test_sound_speed_rejects_out_of_range():
    with pytest.raises(ValueError):
        density_to_sound_speed(950.0)
    with pytest.raises(ValueError):
        density_to_sound_speed(2000.0)


def test_absorption_examples():
    assert hu_to_absorption(2000) == 4.0
    assert hu_to_absorption(300) == 8.7
    assert abs(hu_to_absorption(1150) - (4 + 4.7 * (1 - np.sqrt(850 / 1700)))) < 1e-12
    assert abs(hu_to_absorption(1150) - 5.3765) < 1e-3


def test_composition_endpoint():
    assert density_to_sound_speed(hu_to_density(P.hu_max)) == P.c_max


def test_params_reject_unit_power():
    with pytest.raises(ValueError, match="singular"):
        HuMappingParams(alpha_power=1.0)
    with pytest.raises(ValueError):
        HuMappingParams(rho_min=2000.0)


@given(a=st.floats(-3000, 5000), b=st.floats(-3000, 5000))
def test_monotonicity(a, b):
    lo, hi = min(a, b), max(a, b)
    assert hu_to_density(lo) <= hu_to_density(hi)
    assert hu_to_absorption(lo) >= hu_to_absorption(hi)
    r_lo, r_hi = hu_to_density(lo), hu_to_density(hi)
    if r_lo < r_hi:
        assert density_to_sound_speed(r_lo) < density_to_sound_speed(r_hi)


@given(hu=hnp.arrays(np.float64, (3, 3, 3), elements=st.floats(-3000, 5000)))
def test_medium_within_bounds_and_clamp_idempotent(hu):
    m = build_medium(_ct(hu))
    assert np.all((m.rho.values >= P.rho_min) & (m.rho.values <= P.rho_max))
    assert np.all((m.c.values >= P.c_min) & (m.c.values <= P.c_max))
    assert np.all((m.alpha0.values >= 0) & (m.alpha0.values <= P.alpha_max))
    assert m.c_ref >= m.c.values.max()
    m2 = build_medium(_ct(np.clip(hu, 0.0, P.hu_max)))
    for a, b in ((m.rho, m2.rho), (m.c, m2.c), (m.alpha0, m2.alpha0)):
        np.testing.assert_array_equal(a.values, b.values)


def test_all_zero_is_water():
    m = build_medium(_ct(np.zeros((4, 4, 4))))
    assert np.all(m.rho.values == 1000) and np.all(m.c.values == 1500)
    assert np.all(m.alpha0.values == 0) and m.c_ref == 1500
    assert not m.absorbing


def test_uniform_bone_endpoint():
    m = build_medium(_ct(np.full((4, 4, 4), 2000.0)))
    assert np.all(m.rho.values == 1900) and np.all(m.c.values == 3100)
    assert np.all(m.alpha0.values == 4.0) and m.c_ref == 3100


def test_shell_phantom_medium():
    ph = make_skull_phantom(GridSpec.cube(32, 0.5), 6.0, 2.0, 1700)
    m = build_medium(ph)
    shell = ph.values > 0
    assert np.all(m.rho.values[shell] == 1765.0)
    assert np.all(np.abs(m.c.values[shell] - 2860.0) <= 0.5)
    assert np.all(m.c.values[~shell] == 1500.0) and np.all(m.alpha0.values[~shell] == 0)


def test_water_threshold_configurable():
    m = build_medium(_ct(np.full((2, 2, 2), 100.0)), water_threshold=50.0)
    assert np.all(m.rho.values == hu_to_density(100.0))
    assert np.all(m.alpha0.values == 8.7)  # clamped to hu_min for absorption


def test_build_requires_isotropic():
    f = ScalarField3D(GridSpec((2, 2, 2), (0.5, 0.5, 1.0)), np.zeros((2, 2, 2)), "HU")
    with pytest.raises(ValueError):
        build_medium(f)


def test_medium_invariants():
    g = GridSpec.cube(2, 0.5)
    with pytest.raises(ValueError):
        AcousticMedium.homogeneous(g, rho=0.0)
    m = AcousticMedium.homogeneous(g, c=1500.0)
    with pytest.raises(ValueError):
        AcousticMedium(m.rho, m.c, m.alpha0, c_ref=1000.0)
    other = ScalarField3D(GridSpec.cube(3, 0.5), np.ones((3, 3, 3)), "m/s")
    with pytest.raises(ValueError):
        AcousticMedium(m.rho, other, m.alpha0)


# ----------------------------------------------------------- resampling


def test_resample_identity():
    v = np.random.default_rng(0).normal(size=(5, 6, 7))
    out = resample_isotropic(_ct(v), 0.5)
    np.testing.assert_array_equal(out.values, v)
    assert out.grid == _ct(v).grid


@given(c=st.floats(-1e3, 1e3), spacing=st.floats(0.3, 2.0), target=st.floats(0.25, 1.5))
def test_resample_constant(c, spacing, target):
    out = resample_isotropic(_ct(np.full((4, 5, 3), c), spacing), target)
    np.testing.assert_allclose(out.values, c, rtol=0, atol=1e-9 * max(1, abs(c)))


def test_resample_linear_ramp_exact():
    g = GridSpec((9, 7, 5), (1.0, 1.0, 1.0), origin=(3.0, -1.0, 2.0))
    x, y, z = np.meshgrid(*[np.arange(n) * 1.0 for n in g.dims], indexing="ij")
    ramp = lambda x, y, z: 2.0 * x - 0.5 * y + 3.0 * z + 7.0
    out = resample_isotropic(ScalarField3D(g, ramp(x, y, z), "HU"), 0.5)
    assert out.grid.dims == (17, 13, 9)
    assert out.grid.origin == g.origin
    X, Y, Z = np.meshgrid(*[np.arange(n) * 0.5 for n in out.grid.dims], indexing="ij")
    np.testing.assert_allclose(out.values, ramp(X, Y, Z), atol=1e-6)


def test_resample_anisotropic_to_isotropic():
    g = GridSpec((4, 4, 3), (0.5, 0.5, 1.0))
    z = np.arange(3) * 1.0
    v = np.broadcast_to(z, (4, 4, 3)).copy()
    out = resample_isotropic(ScalarField3D(g, v, "HU"), 0.5)
    assert out.grid.isotropic and out.grid.dims == (4, 4, 5)
    np.testing.assert_allclose(out.values[0, 0], np.arange(5) * 0.5)
