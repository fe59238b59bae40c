"""End-to-end run of one config, and evaluation of predicted fields."""
from __future__ import annotations

import json
import logging
import os
import platform
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import SimConfig
from .errors import StageError
from .extract import DEFAULT_RAM_CAP, RecordingPlan, crop_roi, extract_amplitude, record_window
from .grid import GridSpec, ScalarField3D
from .medium import build_medium, resample_isotropic
from .metrics import STD_CONVENTION, MetricParams, compute_metrics, summarize
from .solver import KSpaceSolver, choose_pml_size, make_time_params
from .transducer import make_source
from .volume_io import log_compress, read_npz, read_nifti, write_npz

log = logging.getLogger(__name__)

ARTIFACT_MEMBERS = ("ct_crop", "pressure", "transducer_coords")


def sidecar_path(npz_path) -> Path:
    return Path(npz_path).with_suffix(".json")


class _Stage:
    def __init__(self, name: str, timings: dict):
        self.name = name
        self.timings = timings

    def __enter__(self):
        self.t0 = time.perf_counter()
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = time.perf_counter() - self.t0
        if exc is not None and not isinstance(exc, (StageError, KeyboardInterrupt)):
            raise StageError(self.name, exc) from exc
        return False


def run_simulation(cfg: SimConfig, workers: int | None = None, ram_cap: int = DEFAULT_RAM_CAP,
                   progress: int = 0) -> Path:
    """Medium, source, solve, amplitude, crop, write. Returns the ``.npz`` path.

    Outputs are written atomically; on any failure neither the archive nor
    its JSON sidecar is left behind.
    """
    out = Path(cfg.output_path)
    side = sidecar_path(out)
    timings: dict = {}
    created = []
    try:
        with _Stage("load", timings):
            ct = read_nifti(cfg.ct_path)
            ct = resample_isotropic(ct, cfg.spacing)
        with _Stage("medium", timings):
            medium = build_medium(ct, cfg.hu_mapping, cfg.water_threshold)
        with _Stage("source", timings):
            bowl = cfg.bowl()
            source = make_source(bowl, ct.grid, cfg.point_spacing)
        with _Stage("solve", timings):
            tp = make_time_params(cfg.f0, cfg.ppw, cfg.cfl, ct.grid, medium,
                                  t_end=cfg.t_end_override, n_periods=cfg.n_record_periods,
                                  margin=cfg.t_end_margin)
            pml = _pml_thickness(cfg, ct.grid)
            solver = KSpaceSolver(medium, tp, source, pml_thickness=pml,
                                  pml_strength=cfg.pml.strength, pml_order=cfg.pml.order,
                                  workers=workers)
            plan = RecordingPlan.tail(tp.n_steps, tp.ppp, cfg.n_record_periods)
            t0 = time.perf_counter()
            store = record_window(solver, plan, ram_cap, progress)
            solve_wall = time.perf_counter() - t0
        with _Stage("extract", timings):
            try:
                amp = extract_amplitude(store, cfg.f0, tp.ppp, ct.grid)
            finally:
                store.close()
        with _Stage("crop", timings):
            ct_crop, p_crop, offset = crop_roi(amp.amplitude, ct, source, cfg.crop_size)
        with _Stage("write", timings):
            meta = {
                "software": {"name": "tfusim", "version": __version__,
                             "python": platform.python_version(), "numpy": np.__version__},
                "config": cfg.to_dict(),
                "seed": cfg.seed,
                "grid": {"dims": list(ct.grid.dims), "spacing_mm": list(ct.grid.spacing),
                         "origin_mm": list(ct.grid.origin)},
                "crop": {"offset_vox": list(offset), "size": cfg.crop_size,
                         "origin_mm": list(ct_crop.grid.origin)},
                "time": {"dt": tp.dt, "n_steps": tp.n_steps, "ppp": tp.ppp, "t_end": tp.t_end,
                         "record_start": plan.start_step, "record_end": plan.end_step},
                "pml_thickness": list(pml),
                "c_ref": float(medium.c_ref),
                "source": {"n_points": source.n_points, "n_nodes": int(len(source.indices)),
                           "area_per_point_mm2": source.area_per_point},
                "transducer_coords_units": "mm",
                "solve_wall_s": solve_wall,
                "peak_memory_estimate_bytes": solver.memory_estimate(),
                "timings_s": timings,
            }
            out.parent.mkdir(parents=True, exist_ok=True)
            tmp_side = side.with_name(side.name + ".tmp")
            created.append(tmp_side)
            tmp_side.write_text(json.dumps(meta, indent=2), encoding="utf-8")
            # write_npz is itself atomic, so a failure there leaves any old archive alone
            write_npz(out, {
                "ct_crop": ct_crop.values.astype(np.float32),
                "pressure": p_crop.values.astype(np.float32),
                "transducer_coords": source.points.astype(np.float64),
            }, compress=cfg.compress)
            created += [out, side]
            os.replace(tmp_side, side)
    except BaseException:
        # only remove what this run wrote; an older result stays untouched
        for p in created:
            if p.exists():
                p.unlink()
        raise
    return out


def _pml_thickness(cfg: SimConfig, grid: GridSpec) -> tuple:
    if cfg.pml.thickness is not None:
        return (cfg.pml.thickness,) * 3
    return tuple(choose_pml_size(n, cfg.pml.range) for n in grid.dims)


# ------------------------------------------------------------------ evaluate


def load_pressure(path) -> np.ndarray:
    data = read_npz(path)
    if "pressure" not in data:
        raise KeyError(f"{path}: no 'pressure' member")
    return data["pressure"].astype(np.float64)


def _prepare(p: np.ndarray, log_scale: bool) -> np.ndarray:
    peak = p.max()
    if not peak > 0:
        raise ValueError("pressure field has no positive maximum")
    p = p / peak
    if log_scale:
        grid = GridSpec(p.shape, (1.0, 1.0, 1.0))
        p = log_compress(ScalarField3D(grid, p)).values
    return p


def evaluate_pair(pred_path, gt_path, params: MetricParams = MetricParams(),
                  log_scale: bool = False) -> dict:
    pred = load_pressure(pred_path)
    gt = load_pressure(gt_path)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    m = compute_metrics(_prepare(pred, log_scale), _prepare(gt, log_scale), params)
    rec = m.to_dict()
    rec.update(pred=str(pred_path), gt=str(gt_path))
    return rec


def evaluate(pred, gt, params: MetricParams = MetricParams(), log_scale: bool = False,
             out_path=None) -> dict:
    """Compare a predicted ``.npz`` (or directory of them) with the reference.

    Both fields are divided by their own maximum first, then optionally
    log-compressed. Directory mode pairs files by name.
    """
    pred, gt = Path(pred), Path(gt)
    if pred.is_dir() != gt.is_dir():
        raise ValueError("pred and gt must both be files or both be directories")
    if pred.is_dir():
        names = sorted(p.name for p in pred.glob("*.npz"))
        missing = [n for n in names if not (gt / n).exists()]
        if missing:
            raise ValueError(f"no reference for {missing[0]}")
        if not names:
            raise ValueError(f"no .npz files in {pred}")
        records = [evaluate_pair(pred / n, gt / n, params, log_scale) for n in names]
    else:
        records = [evaluate_pair(pred, gt, params, log_scale)]
    report = {
        "preprocessing": "log1p" if log_scale else "raw",
        "normalization": "divide by per-field maximum",
        "std_convention": STD_CONVENTION,
        "units": {"relative_l2": "ratio", "relative_l2_percent": "percent",
                  "focal_position_error": "mm", "max_pressure_error": "percent"},
        "params": {"alpha_weight": params.alpha_weight, "lambda": params.lam,
                   "spacing_mm": list(params.spacing)},
        "samples": records,
        "summary": summarize(records),
    }
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(json.dumps(report, indent=2), encoding="utf-8")
    return report


def read_transducer_coords(path, spacing=None):
    """``transducer_coords`` of an artifact in mm, plus how they were read.

    Our own archives say ``mm`` in the sidecar. Without a sidecar (e.g.
    third-party files) the units are guessed: integer-valued coordinates
    that all fall inside the ``ct_crop`` index range are taken as voxel
    indices and scaled by ``spacing`` (default 0.5 mm), else as mm.
    """
    path = Path(path)
    data = read_npz(path)
    coords = np.asarray(data["transducer_coords"], dtype=np.float64)
    side = sidecar_path(path)
    if side.exists():
        units = json.loads(side.read_text(encoding="utf-8")).get("transducer_coords_units", "mm")
        if units == "mm":
            return coords, "mm (sidecar)"
    shape = np.asarray(data["ct_crop"].shape) if "ct_crop" in data else None
    integral = np.allclose(coords, np.rint(coords), atol=1e-6)
    in_range = shape is not None and np.all(coords >= 0) and np.all(coords <= shape - 1)
    if integral and in_range:
        h = np.asarray(spacing if spacing is not None else (0.5, 0.5, 0.5), dtype=float)
        return coords * h, "voxels (inferred)"
    return coords, "mm (inferred)"
