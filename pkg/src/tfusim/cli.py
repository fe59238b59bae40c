"""``tfusim`` command line.

Exit codes: 0 success, 1 usage or config validation error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tfusim", description="Transcranial ultrasound field simulation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-config", help="sample transducer placements for one subject")
    g.add_argument("ct", help="subject CT volume (NIfTI)")
    g.add_argument("--subject", help="subject id (default: file stem)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=20)
    g.add_argument("--out-dir", default="configs")
    g.add_argument("--results-dir", default="results", help="where runs write their npz")
    g.add_argument("--preset", choices=("full", "desk"), default="full",
                   help="placement ranges: full-scale or laptop-scale phantoms")

    r = sub.add_parser("run", help="run one or more simulation configs")
    r.add_argument("configs", nargs="+")
    r.add_argument("--threads", type=int, default=None, help="FFT worker threads")
    r.add_argument("--ram-cap", type=float, default=512, help="MiB kept in RAM for recording")
    r.add_argument("--jobs", type=int, default=1, help="independent runs in parallel processes")
    r.add_argument("--progress", type=int, default=0, help="print a progress line every N steps")

    e = sub.add_parser("evaluate", help="compare predicted and reference pressure fields")
    e.add_argument("pred")
    e.add_argument("gt")
    e.add_argument("--out", help="write the JSON report here")
    e.add_argument("--log", action="store_true", help="log-compress after normalization")
    e.add_argument("--alpha", type=float, default=5.0)
    e.add_argument("--lam", type=float, default=0.1)
    e.add_argument("--spacing", type=float, default=0.5)

    ph = sub.add_parser("phantom", help="write a spherical-shell skull phantom")
    ph.add_argument("out", help="output .nii or .nii.gz")
    ph.add_argument("--dims", type=int, default=64)
    ph.add_argument("--spacing", type=float, default=0.5)
    ph.add_argument("--outer-radius", type=float, default=11.0, help="mm")
    ph.add_argument("--thickness", type=float, default=2.0, help="mm")
    ph.add_argument("--hu", type=float, default=1700.0)

    s = sub.add_parser("slice", help="export a 2D slice of an npz member as PNG/PGM")
    s.add_argument("npz")
    s.add_argument("member")
    s.add_argument("--axis", choices=("x", "y", "z"), default="z")
    s.add_argument("--index", type=int, default=None, help="default: middle slice")
    s.add_argument("--out", required=True)
    s.add_argument("--scale", choices=("linear", "log"), default="linear")

    v = sub.add_parser("validate", help="check a config against the schema")
    v.add_argument("configs", nargs="+")
    return p


def _cmd_gen_config(a) -> int:
    from .generate import DESK_PARAMS, FULL_PARAMS, generate_configs
    from .volume_io import read_nifti

    ct = read_nifti(a.ct)
    subject = a.subject or Path(a.ct).name.split(".")[0]
    params = DESK_PARAMS if a.preset == "desk" else FULL_PARAMS
    cfgs = generate_configs(ct, a.count, a.seed, subject, a.ct, a.results_dir, params)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, cfg in enumerate(cfgs):
        path = out / f"{subject}_{i:03d}.yaml"
        cfg.save(path)
        print(path)
    return EXIT_OK


def _cmd_run(a) -> int:
    from .config import load_config
    from .pipeline import run_simulation

    cfgs = [load_config(c) for c in a.configs]  # validate everything first
    if a.jobs > 1 and len(cfgs) > 1:
        return _run_jobs(a)
    for cfg in cfgs:
        out = run_simulation(cfg, workers=a.threads, ram_cap=int(a.ram_cap * 2**20),
                             progress=a.progress)
        print(out)
    return EXIT_OK


def _run_jobs(a) -> int:
    base = [sys.executable, "-m", "tfusim.cli", "run", "--ram-cap", str(a.ram_cap),
            "--progress", str(a.progress)]
    if a.threads:
        base += ["--threads", str(a.threads)]
    pending = list(a.configs)
    running: list = []
    status = EXIT_OK
    while pending or running:
        while pending and len(running) < a.jobs:
            running.append(subprocess.Popen(base + [pending.pop(0)]))
        proc = running.pop(0)
        if proc.wait() != 0:
            status = EXIT_RUNTIME
    return status


def _cmd_evaluate(a) -> int:
    from .metrics import MetricParams
    from .pipeline import evaluate

    params = MetricParams(alpha_weight=a.alpha, lam=a.lam, spacing=(a.spacing,) * 3)
    try:
        report = evaluate(a.pred, a.gt, params, log_scale=a.log, out_path=a.out)
    except ValueError as exc:  # mismatched inputs are an argument error
        print(f"tfusim evaluate: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(json.dumps(report["summary"], indent=2))
    return EXIT_OK


def _cmd_phantom(a) -> int:
    from .grid import GridSpec
    from .volume_io import make_skull_phantom, write_nifti

    grid = GridSpec.cube(a.dims, a.spacing)
    write_nifti(a.out, make_skull_phantom(grid, a.outer_radius, a.thickness, a.hu))
    print(a.out)
    return EXIT_OK


def _cmd_slice(a) -> int:
    from .grid import GridSpec, ScalarField3D
    from .volume_io import export_slice_image, read_npz

    data = read_npz(a.npz)
    if a.member not in data:
        print(f"tfusim slice: member '{a.member}' not found in {a.npz} "
              f"(available: {', '.join(sorted(data))})", file=sys.stderr)
        return EXIT_RUNTIME
    arr = np.asarray(data[a.member], dtype=np.float64)
    if arr.ndim != 3:
        print(f"tfusim slice: member '{a.member}' is not a 3D volume", file=sys.stderr)
        return EXIT_RUNTIME
    units = "HU" if a.member.startswith("ct") else "Pa"
    field = ScalarField3D(GridSpec(arr.shape, (1.0, 1.0, 1.0)), arr, units)
    index = arr.shape["xyz".index(a.axis)] // 2 if a.index is None else a.index
    export_slice_image(field, a.axis, index, a.out, a.scale)
    print(a.out)
    return EXIT_OK


def _cmd_validate(a) -> int:
    from .config import load_config

    for c in a.configs:
        load_config(c)
        print(f"{c}: ok")
    return EXIT_OK


COMMANDS = {
    "gen-config": _cmd_gen_config,
    "run": _cmd_run,
    "evaluate": _cmd_evaluate,
    "phantom": _cmd_phantom,
    "slice": _cmd_slice,
    "validate": _cmd_validate,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"tfusim {args.command}: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 2
        print(f"tfusim {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
