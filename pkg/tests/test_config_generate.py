import copy

import numpy as np
import pytest
import yaml
from hypothesis import given, strategies as st

from tfusim.config import SCHEMA_VERSION, config_from_dict, load_config
from tfusim.errors import ConfigError
from tfusim.generate import DESK_PARAMS, FULL_PARAMS, generate_configs, surface_point
from tfusim.grid import GridSpec
from tfusim.rng import CounterRng, fnv1a64, mix64, stream_key
from tfusim.volume_io import make_skull_phantom


# ------------------------------------------------------------------ rng


def test_splitmix_reference_sequence():
    # published SplitMix64 outputs for state 1234567
    r = CounterRng(1234567)
    assert [r.next_u64() for _ in range(3)] == [
        6457827717110365317, 3203168211198807973, 9817491932198370423]


def test_fnv1a_reference_values():
    assert fnv1a64("") == 0xCBF29CE484222325
    assert fnv1a64("a") == 0xAF63DC4C8601EC8C


def test_streams_differ_by_subject_and_index():
    keys = {stream_key(7, s, i) for s in ("sub-01", "sub-02") for i in range(20)}
    assert len(keys) == 40


@given(st.integers(0, 2**64 - 1))
def test_random_in_unit_interval(key):
    r = CounterRng(key)
    for _ in range(5):
        assert 0.0 <= r.random() < 1.0


@given(st.integers(0, 2**63), st.integers(-50, 50), st.integers(0, 50))
def test_integers_closed_range(key, lo, span):
    r = CounterRng(key)
    assert all(lo <= r.integers(lo, lo + span) <= lo + span for _ in range(5))


def test_mix64_is_a_bijection_on_samples():
    xs = np.random.default_rng(0).integers(0, 2**63, 2000, dtype=np.uint64)
    assert len({mix64(int(x)) for x in xs}) == len(set(xs.tolist()))


# --------------------------------------------------------------- config


def _valid():
    return {
        "schema_version": SCHEMA_VERSION,
        "subject_id": "sub-01",
        "ct_path": "ct.nii.gz",
        "output_path": "out/sub-01_000.npz",
        "transducer": {"position": [0, 0, 0], "focus": [30, 0, 0], "roc": 30, "diameter": 20},
    }


def test_minimal_config_defaults():
    cfg = config_from_dict(_valid())
    assert (cfg.f0, cfg.ppw, cfg.cfl, cfg.n_record_periods, cfg.crop_size) == (500e3, 6, 0.3, 3, 256)
    assert cfg.spacing == pytest.approx(0.5, abs=1e-15)
    assert cfg.transducer.amplitude == 60000.0


def test_roundtrip_through_yaml(tmp_path):
    cfg = config_from_dict(_valid())
    cfg.save(tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == cfg


def test_diameter_200_names_the_field():
    d = _valid()
    d["transducer"]["diameter"] = 200
    with pytest.raises(ConfigError) as err:
        config_from_dict(d)
    assert err.value.field == "transducer.diameter"


@pytest.mark.parametrize("mutate, field", [
    (lambda d: d.pop("schema_version"), "schema_version"),
    (lambda d: d.update(schema_version=99), "schema_version"),
    (lambda d: d.update(ppw_typo=6), "ppw_typo"),
    (lambda d: d["transducer"].update(rocc=3), "transducer.rocc"),
    (lambda d: d["transducer"].pop("roc"), "transducer.roc"),
    (lambda d: d["transducer"].update(focus=[25, 0, 0]), "transducer.focus"),
    (lambda d: d["transducer"].update(diameter=70), "transducer.diameter"),
    (lambda d: d.update(f0=-5), "f0"),
    (lambda d: d.update(cfl=0.9), "cfl"),
    (lambda d: d.update(pml={"thickness": 2.5}), "pml.thickness"),
    (lambda d: d.update(hu_mapping={"rho_max": "x"}), "hu_mapping.rho_max"),
])
def test_invalid_configs_name_their_field(mutate, field):
    d = copy.deepcopy(_valid())
    mutate(d)
    with pytest.raises(ConfigError) as err:
        config_from_dict(d)
    assert err.value.field == field


def test_bad_yaml_is_a_config_error(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("a: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(p)


# ------------------------------------------------------------ generation


@pytest.fixture(scope="module")
def desk_phantom():
    return make_skull_phantom(GridSpec.cube(96, 0.5), 18.0, 2.0)


@pytest.fixture(scope="module")
def full_phantom():
    # head-sized shell in a 256^3 grid at 0.5 mm
    return make_skull_phantom(GridSpec.cube(256, 0.5), 50.0, 6.0)


def test_surface_point_on_shell(desk_phantom):
    g = desk_phantom.grid
    p = surface_point(desk_phantom, (1, 0, 0), 50.0)
    r = np.linalg.norm(p - g.center)
    assert 18.0 - 0.5 <= r <= 18.0 + 0.5


def test_surface_point_none_without_bone():
    from tfusim.grid import ScalarField3D

    g = GridSpec.cube(16, 0.5)
    assert surface_point(ScalarField3D(g, np.zeros(g.dims)), (0, 1, 1), 50.0) is None


def test_generation_same_seed_identical_yaml(desk_phantom):
    a = generate_configs(desk_phantom, 4, 7, "ph", "ph.nii", params=DESK_PARAMS)
    b = generate_configs(desk_phantom, 4, 7, "ph", "ph.nii", params=DESK_PARAMS)
    assert [c.to_yaml() for c in a] == [c.to_yaml() for c in b]
    c = generate_configs(desk_phantom, 4, 8, "ph", "ph.nii", params=DESK_PARAMS)
    assert [x.to_yaml() for x in a] != [x.to_yaml() for x in c]


def test_generated_configs_validate(desk_phantom):
    for cfg in generate_configs(desk_phantom, 6, 3, "ph", "ph.nii", params=DESK_PARAMS):
        again = config_from_dict(yaml.safe_load(cfg.to_yaml()))
        assert again == cfg
        bowl = cfg.bowl()
        towards = desk_phantom.grid.center - bowl.position
        assert np.dot(bowl.axis, towards / np.linalg.norm(towards)) == pytest.approx(1.0, abs=1e-6)
        assert cfg.crop_size == 96


def test_full_scale_ranges_on_head_sized_phantom(full_phantom):
    cfgs = generate_configs(full_phantom, 20, 1, "sub", "sub.nii", params=FULL_PARAMS)
    assert len(cfgs) == 20
    places = {(*c.transducer.position, c.transducer.roc, c.transducer.diameter) for c in cfgs}
    assert len(places) == 20
    for c in cfgs:
        assert 55.0 <= c.transducer.roc <= 75.0
        assert 55.0 <= c.transducer.diameter <= 75.0
        assert c.crop_size == 256


def test_no_surface_raises_after_retries():
    from dataclasses import replace

    from tfusim.grid import ScalarField3D

    g = GridSpec.cube(32, 0.5)
    empty = ScalarField3D(g, np.zeros(g.dims), "HU")
    with pytest.raises(RuntimeError):
        generate_configs(empty, 1, 0, "x", "x.nii", params=replace(DESK_PARAMS, max_retries=5))


def test_dataset_enumeration_count():
    # 125 subjects x 20 placements
    keys = {stream_key(0, f"sub-{s:03d}", i) for s in range(125) for i in range(20)}
    assert len(keys) == 2500


def test_documented_example_validates():
    from pathlib import Path

    cfg = load_config(Path(__file__).parent.parent / "docs" / "config_example.yaml")
    assert cfg.spacing == pytest.approx(0.5, abs=1e-12)
    assert cfg.bowl().roc == 65.0
