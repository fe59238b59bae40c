import subprocess
import sys

import numpy as np
import pytest
import yaml

from tfusim.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from tfusim.volume_io import read_nifti, write_npz


@pytest.fixture()
def phantom(tmp_path):
    path = tmp_path / "ph.nii"
    assert main(["phantom", str(path), "--dims", "48", "--outer-radius", "9"]) == EXIT_OK
    return path


def test_phantom_command(phantom):
    ct = read_nifti(phantom)
    assert ct.grid.dims == (48, 48, 48)
    assert ct.values.max() == pytest.approx(1700.0)


def test_gen_config_same_seed_identical_files(tmp_path, phantom):
    args = ["gen-config", str(phantom), "--seed", "7", "--count", "3", "--preset", "desk"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == EXIT_OK
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["ph_000.yaml", "ph_001.yaml", "ph_002.yaml"]
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    assert main(["validate", *map(str, (tmp_path / "a").iterdir())]) == EXIT_OK


def test_unknown_flag_is_usage_error(capsys):
    assert main(["run", "x.yaml", "--frobnicate"]) == EXIT_USAGE
    assert "frobnicate" in capsys.readouterr().err
    assert main([]) == EXIT_USAGE
    assert main(["--help"]) == EXIT_OK


def _config(tmp_path, **transducer):
    t = {"position": [2.0, 12.0, 12.0], "focus": [12.0, 12.0, 12.0], "roc": 10.0, "diameter": 8.0}
    t.update(transducer)
    d = {"schema_version": 1, "subject_id": "s", "ct_path": str(tmp_path / "missing.nii"),
         "output_path": str(tmp_path / "o.npz"), "transducer": t}
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(d))
    return path


def test_run_rejects_diameter_200(tmp_path, capsys):
    cfg = _config(tmp_path, diameter=200.0)
    assert main(["run", str(cfg)]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "transducer.diameter" in err
    assert main(["validate", str(cfg)]) == EXIT_USAGE


def test_run_missing_ct_is_runtime_failure(tmp_path, capsys):
    assert main(["run", str(_config(tmp_path))]) == EXIT_RUNTIME
    assert "[load]" in capsys.readouterr().err


def test_slice_missing_member(tmp_path, capsys):
    path = tmp_path / "a.npz"
    write_npz(path, {"pressure": np.ones((4, 4, 4), np.float32)})
    assert main(["slice", str(path), "ct_crop", "--out", str(tmp_path / "s.png")]) == EXIT_RUNTIME
    assert "ct_crop" in capsys.readouterr().err


def test_slice_writes_image(tmp_path):
    path = tmp_path / "a.npz"
    write_npz(path, {"pressure": np.random.default_rng(0).random((6, 7, 8)).astype(np.float32)})
    out = tmp_path / "s.pgm"
    assert main(["slice", str(path), "pressure", "--axis", "y", "--out", str(out)]) == EXIT_OK
    assert out.read_bytes().startswith(b"P5")


def test_evaluate_command(tmp_path, capsys):
    a, b = tmp_path / "a.npz", tmp_path / "b.npz"
    write_npz(a, {"pressure": np.ones((4, 4, 4), np.float32)})
    write_npz(b, {"pressure": np.ones((4, 4, 5), np.float32)})
    assert main(["evaluate", str(a), str(a), "--out", str(tmp_path / "r.json")]) == EXIT_OK
    assert (tmp_path / "r.json").exists()
    assert main(["evaluate", str(a), str(b)]) == EXIT_USAGE
    assert "shape mismatch" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "tfusim.cli", "validate", str(tmp_path / "nope.yaml")],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_RUNTIME
