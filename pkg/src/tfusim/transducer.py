"""Focused bowl source: cap sampling, grid deposition and CW drive."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import GridSpec

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


def orient_towards(position, target) -> np.ndarray:
    """Unit vector pointing from ``position`` to ``target``."""
    d = np.asarray(target, dtype=float) - np.asarray(position, dtype=float)
    n = np.linalg.norm(d)
    if n == 0:
        raise ValueError("position and target coincide; orientation undefined")
    return d / n


@dataclass
class BowlTransducer:
    """Spherical-cap source.

    ``position`` is the bowl apex (mm) and ``focus`` the centre of
    curvature; ``roc`` and ``diameter`` are in mm, ``f0`` in Hz,
    ``amplitude`` in Pa and ``phase`` in radians.
    """

    position: np.ndarray
    focus: np.ndarray
    roc: float
    diameter: float
    f0: float = 500e3
    amplitude: float = 60000.0
    phase: float = 0.0
    ramp_cycles: float = 2.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.focus = np.asarray(self.focus, dtype=float)
        if not 0 < self.diameter <= 2 * self.roc:
            raise ValueError(
                f"diameter must satisfy 0 < diameter <= 2*roc, got {self.diameter} with roc {self.roc}"
            )
        dist = np.linalg.norm(self.focus - self.position)
        if abs(dist - self.roc) > 1e-6:
            raise ValueError(f"|focus - position| = {dist:.9f} mm does not equal roc {self.roc}")
        if not self.f0 > 0:
            raise ValueError("f0 must be positive")
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if self.ramp_cycles < 0:
            raise ValueError("ramp_cycles must be non-negative")

    @classmethod
    def from_axis(cls, position, axis, roc, diameter, **drive) -> "BowlTransducer":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        position = np.asarray(position, dtype=float)
        return cls(position, position + roc * axis, roc, diameter, **drive)

    @classmethod
    def aimed_at(cls, position, target, roc, diameter, **drive) -> "BowlTransducer":
        return cls.from_axis(position, orient_towards(position, target), roc, diameter, **drive)

    @property
    def axis(self) -> np.ndarray:
        """Unit vector from the apex towards the focus."""
        return (self.focus - self.position) / np.linalg.norm(self.focus - self.position)

    @property
    def half_angle(self) -> float:
        return float(np.arcsin(self.diameter / (2.0 * self.roc)))

    @property
    def cap_area(self) -> float:
        """Spherical cap area in mm^2."""
        return 2.0 * np.pi * self.roc ** 2 * (1.0 - np.cos(self.half_angle))

    def to_dict(self) -> dict:
        return {
            "position": [float(v) for v in self.position],
            "focus": [float(v) for v in self.focus],
            "roc": float(self.roc),
            "diameter": float(self.diameter),
            "f0": float(self.f0),
            "amplitude": float(self.amplitude),
            "phase": float(self.phase),
            "ramp_cycles": float(self.ramp_cycles),
        }


def geometric_focus(t: BowlTransducer) -> np.ndarray:
    return t.focus.copy()


def _frame(axis: np.ndarray):
    """Two unit vectors completing ``axis`` to a right-handed basis."""
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return e1, e2


def sample_bowl_surface(t: BowlTransducer, point_spacing: float) -> np.ndarray:
    """Quasi-uniform points on the cap (N x 3, mm) from a Fibonacci spiral.

    Points are equal-area in ``cos(theta)`` so their density is uniform and
    the count matches ``cap_area / point_spacing**2``.
    """
    if not point_spacing > 0:
        raise ValueError("point_spacing must be > 0")
    if t.diameter > 2 * t.roc:
        raise ValueError("diameter exceeds 2*roc")
    theta = t.half_angle
    n = max(1, int(round(t.cap_area / point_spacing ** 2)))
    i = np.arange(n, dtype=float)
    cos_t = 1.0 - (1.0 - np.cos(theta)) * (i + 0.5) / n
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t ** 2))
    phi = i * GOLDEN_ANGLE
    ez = -t.axis  # focus -> apex
    e1, e2 = _frame(ez)
    local = (
        np.outer(sin_t * np.cos(phi), e1)
        + np.outer(sin_t * np.sin(phi), e2)
        + np.outer(cos_t, ez)
    )
    return t.focus + t.roc * local


@dataclass
class SourceSet:
    """Grid-projected source.

    ``indices`` are x-fastest linear voxel indices and ``weights`` their
    trilinear deposition weights; the weights sum to ``n_points``.
    ``area_per_point`` (mm^2) is the cap area each sample point represents.
    """

    grid: GridSpec
    indices: np.ndarray
    weights: np.ndarray
    n_points: int
    area_per_point: float = 0.0
    drive: BowlTransducer | None = None
    points: np.ndarray | None = field(default=None, repr=False)

    @property
    def nodes(self):
        return list(zip(self.indices.tolist(), self.weights.tolist()))

    def ijk(self) -> np.ndarray:
        return np.stack(self.grid.unravel(self.indices), axis=1)

    def weight_volume(self) -> np.ndarray:
        vol = np.zeros(self.grid.size)
        vol[self.indices] = self.weights
        return vol.reshape(self.grid.dims, order="F")


def rasterize_source(points, grid: GridSpec, transducer: BowlTransducer | None = None,
                     area_per_point: float | None = None) -> SourceSet:
    """Deposit each point onto its 8 neighbouring voxels with trilinear weights."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    frac = grid.world_to_index(points)
    upper = np.asarray(grid.dims) - 1
    tol = 1e-9
    bad = np.any((frac < -tol) | (frac > upper + tol), axis=1)
    if np.any(bad):
        first = points[np.argmax(bad)]
        raise ValueError(
            f"source point ({first[0]:.4f}, {first[1]:.4f}, {first[2]:.4f}) mm lies outside the grid"
        )
    frac = np.clip(frac, 0.0, upper)
    base = np.floor(frac).astype(np.int64)
    # a point on the upper face belongs to the last cell with full weight on its far corner
    base = np.minimum(base, np.maximum(upper - 1, 0))
    d = frac - base

    nx, ny, nz = grid.dims
    idx_all, w_all = [], []
    for ox in (0, 1):
        wx = d[:, 0] if ox else 1.0 - d[:, 0]
        ix = np.minimum(base[:, 0] + ox, nx - 1)
        for oy in (0, 1):
            wy = d[:, 1] if oy else 1.0 - d[:, 1]
            iy = np.minimum(base[:, 1] + oy, ny - 1)
            for oz in (0, 1):
                wz = d[:, 2] if oz else 1.0 - d[:, 2]
                iz = np.minimum(base[:, 2] + oz, nz - 1)
                idx_all.append(ix + nx * (iy + ny * iz))
                w_all.append(wx * wy * wz)
    idx = np.concatenate(idx_all)
    w = np.concatenate(w_all)
    acc = np.bincount(idx, weights=w, minlength=grid.size)
    nodes = np.flatnonzero(acc > 0)
    if area_per_point is None:
        area_per_point = transducer.cap_area / len(points) if transducer is not None else 0.0
    return SourceSet(grid, nodes, acc[nodes], len(points), area_per_point, transducer, points)


def make_source(t: BowlTransducer, grid: GridSpec, point_spacing: float | None = None) -> SourceSet:
    """Sample the bowl at ``point_spacing`` (default half a voxel) and rasterise it."""
    if point_spacing is None:
        point_spacing = min(grid.spacing) / 2.0
    pts = sample_bowl_surface(t, point_spacing)
    return rasterize_source(pts, grid, t, t.cap_area / len(pts))


def drive_signal(t: BowlTransducer, time) -> np.ndarray:
    """``A * env(time) * cos(2 pi f0 time + phase)`` with a raised-cosine onset."""
    time = np.asarray(time, dtype=float)
    if np.any(time < 0):
        raise ValueError("time must be non-negative")
    wave = np.cos(2.0 * np.pi * t.f0 * time + t.phase)
    if t.ramp_cycles > 0:
        t_ramp = t.ramp_cycles / t.f0
        env = np.where(time < t_ramp, 0.5 * (1.0 - np.cos(np.pi * time / t_ramp)), 1.0)
    else:
        env = 1.0
    return t.amplitude * env * wave
