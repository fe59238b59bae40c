"""Seeded generation of per-subject simulation configs.

For each placement the bowl radius of curvature and aperture are drawn
uniformly around a base value, a direction is picked from per-axis voxel
offsets measured from the grid faces, and the bowl apex is put on the
outermost above-threshold voxel along the ray from the grid centre. The
bowl then points at the grid centre.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import PmlConfig, SimConfig, TransducerConfig
from .grid import ScalarField3D
from .rng import CounterRng
from .transducer import BowlTransducer, sample_bowl_surface


@dataclass(frozen=True)
class GenerationParams:
    roc_base: float = 65.0
    roc_spread: float = 10.0
    diameter_base: float = 65.0
    diameter_spread: float = 10.0
    offset_range: tuple = (40, 60)
    boundary_pad: int = 10
    surface_threshold: float = 50.0
    standoff: float = 0.0
    max_retries: int = 200

    @property
    def roc_range(self):
        return (self.roc_base - self.roc_spread, self.roc_base + self.roc_spread)

    @property
    def diameter_range(self):
        return (self.diameter_base - self.diameter_spread, self.diameter_base + self.diameter_spread)


FULL_PARAMS = GenerationParams()
# laptop-scale phantoms (64^3 to 128^3 at 0.5 mm)
DESK_PARAMS = GenerationParams(roc_base=30.0, roc_spread=5.0, diameter_base=20.0,
                               diameter_spread=5.0, offset_range=(4, 12), boundary_pad=4)


def surface_point(ct: ScalarField3D, direction, threshold: float) -> np.ndarray | None:
    """Outermost voxel centre above ``threshold`` on the ray from the grid centre.

    Returns world coordinates (mm) or ``None`` if the ray meets no such voxel.
    """
    g = ct.grid
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    start = (np.asarray(g.dims) - 1) / 2.0
    # march in voxel index space, half-voxel steps, until leaving the grid
    d_idx = d / np.asarray(g.spacing)
    d_idx = d_idx / np.abs(d_idx).max()
    upper = np.asarray(g.dims) - 1
    steps = np.arange(0, 2 * int(np.max(g.dims)) + 1) * 0.5
    pts = start + steps[:, None] * d_idx
    inside = np.all((pts >= -0.5) & (pts <= upper + 0.5), axis=1)
    pts = pts[inside]
    ijk = np.clip(np.rint(pts).astype(int), 0, upper)
    hit = ct.values[ijk[:, 0], ijk[:, 1], ijk[:, 2]] > threshold
    if not np.any(hit):
        return None
    last = ijk[np.flatnonzero(hit)[-1]]
    return g.index_to_world(last)


def _bowl_inside(bowl: BowlTransducer, ct: ScalarField3D, margin_vox: float = 1.0) -> bool:
    g = ct.grid
    pts = sample_bowl_surface(bowl, max(min(g.spacing) * 2, bowl.diameter / 40.0))
    rim = bowl.focus + bowl.roc * _rim_dirs(bowl)
    idx = g.world_to_index(np.vstack([pts, rim, bowl.position[None, :]]))
    return bool(np.all(idx >= margin_vox) and np.all(idx <= np.asarray(g.dims) - 1 - margin_vox))


def _rim_dirs(bowl: BowlTransducer, n: int = 64) -> np.ndarray:
    ez = -bowl.axis
    helper = np.array([1.0, 0.0, 0.0]) if abs(ez[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(ez, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(ez, e1)
    th = bowl.half_angle
    ph = 2 * np.pi * np.arange(n) / n
    return (np.sin(th) * (np.outer(np.cos(ph), e1) + np.outer(np.sin(ph), e2))
            + np.cos(th) * ez)


def sample_placement(ct: ScalarField3D, rng: CounterRng, params: GenerationParams = FULL_PARAMS):
    """Draw one valid placement, retrying up to ``params.max_retries`` times."""
    g = ct.grid
    dims = np.asarray(g.dims)
    centre_idx = (dims - 1) / 2.0
    centre = g.center
    for _ in range(params.max_retries):
        lo, hi = params.roc_range
        roc = rng.uniform(lo, hi)
        lo, hi = params.diameter_range
        dia = rng.uniform(lo, hi)
        if dia > 2 * roc:
            continue
        cand = np.empty(3)
        for a in range(3):
            off = params.boundary_pad + rng.integers(*params.offset_range)
            cand[a] = off if rng.choice_sign() < 0 else dims[a] - 1 - off
        direction = (cand - centre_idx) * np.asarray(g.spacing)
        if np.linalg.norm(direction) < 1e-9:
            continue
        surf = surface_point(ct, direction, params.surface_threshold)
        if surf is None:
            continue
        out = (surf - centre) / np.linalg.norm(surf - centre)
        position = surf + params.standoff * out
        if np.linalg.norm(position - centre) < 1e-9:
            continue
        bowl = BowlTransducer.aimed_at(position, centre, roc, dia)
        if not _bowl_inside(bowl, ct):
            continue
        return bowl
    raise RuntimeError(
        f"no valid transducer placement found after {params.max_retries} attempts; "
        "check the surface threshold and grid size"
    )


def generate_configs(
    ct: ScalarField3D,
    n: int,
    seed: int,
    subject_id: str,
    ct_path: str,
    out_dir: str = "results",
    params: GenerationParams = FULL_PARAMS,
    base: dict | None = None,
) -> list:
    """``n`` configs for one subject; identical inputs give identical configs."""
    if n < 1:
        raise ValueError("n must be >= 1")
    base = dict(base or {})
    # small phantoms cannot hold the default 256^3 crop
    base.setdefault("crop_size", min(256, min(ct.grid.dims)))
    configs = []
    for i in range(n):
        rng = CounterRng.for_placement(seed, subject_id, i)
        bowl = sample_placement(ct, rng, params)
        t = TransducerConfig(
            position=[round(float(v), 6) for v in bowl.position],
            focus=[round(float(v), 6) for v in bowl.focus],
            roc=round(bowl.roc, 6),
            diameter=round(bowl.diameter, 6),
        )
        # rounding must not break |focus - position| = roc
        t.focus = [float(p + t.roc * a) for p, a in zip(t.position, bowl.axis)]
        cfg = SimConfig(
            subject_id=subject_id,
            ct_path=str(ct_path),
            transducer=t,
            output_path=str(Path(out_dir) / f"{subject_id}_{i:03d}.npz"),
            seed=int(seed),
            placement_index=i,
            pml=PmlConfig(),
        )
        cfg = replace(cfg, **base)
        configs.append(cfg)
    return configs
