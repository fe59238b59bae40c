"""Simulation length, tail-window recording, single-bin DFT and ROI cropping."""
from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, ScalarField3D
from .transducer import SourceSet

DEFAULT_RAM_CAP = 512 * 2 ** 20


def estimate_t_end(grid: GridSpec, medium_or_cmin, margin: float = 1.5, n_periods: int = 3,
                   f0: float = 500e3) -> float:
    """``margin`` diagonal transits at the slowest sound speed plus the recording window."""
    if margin < 1:
        raise ValueError("margin must be >= 1")
    if isinstance(medium_or_cmin, (int, float, np.floating)):
        c_min = float(medium_or_cmin)
    else:
        c_min = float(medium_or_cmin.c.values.min())
    diagonal_m = float(np.linalg.norm(grid.extent)) * 1e-3
    return margin * diagonal_m / c_min + n_periods / f0


@dataclass(frozen=True)
class RecordingPlan:
    start_step: int
    end_step: int
    samples_per_period: int
    n_periods: int

    def __post_init__(self):
        if self.end_step - self.start_step != self.n_periods * self.samples_per_period:
            raise ValueError("recording window must span a whole number of periods")
        if self.start_step < 0:
            raise ValueError("recording window starts before step 0")

    @property
    def length(self) -> int:
        return self.end_step - self.start_step

    @classmethod
    def tail(cls, n_steps: int, ppp: int, n_periods: int) -> "RecordingPlan":
        """The last ``n_periods`` whole periods of a run of ``n_steps`` steps."""
        length = n_periods * ppp
        if length > n_steps:
            raise ValueError(f"window of {length} steps does not fit in a run of {n_steps}")
        return cls(n_steps - length, n_steps, ppp, n_periods)


class SlabStore:
    """Recorder holding the window's pressure as z-slabs, step-major.

    Kept in RAM when the window fits under ``ram_cap`` bytes, otherwise
    spilled to a flat float32 temporary file that is removed by
    :meth:`close`. Use as the ``recorder`` callback of a solver run.
    """

    def __init__(self, dims, plan: RecordingPlan, ram_cap: int = DEFAULT_RAM_CAP,
                 spill_dir: str | None = None):
        self.dims = tuple(int(d) for d in dims)
        self.plan = plan
        nx, ny, nz = self.dims
        shape = (plan.length, nz, nx, ny)
        self.nbytes = int(np.prod(shape)) * 4
        self.spilled = self.nbytes > ram_cap
        self.path = None
        if self.spilled:
            fd, self.path = tempfile.mkstemp(prefix="tfusim-window-", suffix=".f32", dir=spill_dir)
            os.close(fd)
            self.data = np.memmap(self.path, dtype=np.float32, mode="w+", shape=shape)
        else:
            self.data = np.zeros(shape, dtype=np.float32)
        self.filled = np.zeros(plan.length, dtype=bool)

    def __call__(self, step: int, pressure: np.ndarray) -> None:
        w = step - self.plan.start_step
        if not 0 <= w < self.plan.length:
            raise ValueError(f"step {step} outside recording window "
                             f"[{self.plan.start_step}, {self.plan.end_step})")
        if pressure.shape != self.dims:
            raise ValueError("pressure shape does not match store dims")
        for z in range(self.dims[2]):
            self.data[w, z] = pressure[:, :, z]
        self.filled[w] = True

    @property
    def n_slabs(self) -> int:
        return int(self.filled.sum()) * self.dims[2]

    def slab(self, z: int) -> np.ndarray:
        """Time series of z-plane ``z``: shape (window, Nx, Ny)."""
        return self.data[:, z]

    def close(self) -> None:
        if self.spilled and self.path is not None:
            del self.data
            if os.path.exists(self.path):
                os.unlink(self.path)
            self.path = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def record_window(solver, plan: RecordingPlan, ram_cap: int = DEFAULT_RAM_CAP,
                  progress: int = 0) -> SlabStore:
    """Run ``solver`` to ``plan.end_step`` and return the filled store."""
    if plan.end_step > solver.tp.n_steps or plan.start_step < 0:
        raise ValueError("recording window lies outside the run")
    store = SlabStore(solver.grid.dims, plan, ram_cap)
    try:
        solver.run(recorder=store, record_start=plan.start_step, n_steps=plan.end_step,
                   progress=progress)
    except BaseException:
        store.close()
        raise
    return store


def _dft_weights(n_samples: int, ppp: int) -> np.ndarray:
    n = np.arange(n_samples)
    return np.exp(-2j * np.pi * n / ppp)


def tone_amplitude(samples: np.ndarray, ppp: int) -> np.ndarray:
    """Amplitude at one cycle per ``ppp`` samples along axis 0.

    ``(2/N) |sum_n x_n exp(-i 2 pi n / ppp)|`` in double precision. The
    window must hold a whole number of periods.
    """
    samples = np.asarray(samples)
    ns = samples.shape[0]
    if ns == 0 or ns % ppp:
        raise ValueError(f"{ns} samples is not a whole number of {ppp}-sample periods")
    w = _dft_weights(ns, ppp)
    acc = np.tensordot(w, samples.astype(np.float64), axes=(0, 0))
    return 2.0 / ns * np.abs(acc)


@dataclass
class AmplitudeField:
    grid: GridSpec
    amplitude: ScalarField3D
    f0: float


def extract_amplitude(store: SlabStore, f0: float, ppp: int, grid: GridSpec | None = None) -> AmplitudeField:
    """Per-voxel amplitude at ``f0`` from a filled :class:`SlabStore`, slab by slab."""
    ns = store.plan.length
    if ns % ppp:
        raise ValueError("recording window is not a whole number of periods")
    if not store.filled.all():
        raise ValueError("recording window is incomplete")
    nx, ny, nz = store.dims
    w = _dft_weights(ns, ppp)
    out = np.empty((nx, ny, nz))
    for z in range(nz):
        slab = store.slab(z)
        acc = np.zeros((nx, ny), dtype=np.complex128)
        for n in range(ns):
            acc += w[n] * slab[n].astype(np.float64)
        out[:, :, z] = 2.0 / ns * np.abs(acc)
    if grid is None:
        grid = GridSpec(store.dims, (1.0, 1.0, 1.0))
    return AmplitudeField(grid, ScalarField3D(grid, out, "Pa"), f0)


class DftAccumulator:
    """Streaming alternative to :class:`SlabStore` + :func:`extract_amplitude`.

    Keeps one complex128 running sum per voxel for each requested window
    (given as ``(start_step, end_step)``), so several windows can be
    evaluated in one run without storing the time series.
    """

    def __init__(self, dims, ppp: int, windows):
        self.ppp = int(ppp)
        self.windows = [tuple(int(v) for v in w) for w in windows]
        for s, e in self.windows:
            if (e - s) % self.ppp or e <= s:
                raise ValueError(f"window ({s}, {e}) is not a whole number of periods")
        self.sums = [np.zeros(dims, dtype=np.complex128) for _ in self.windows]
        self.counts = [0] * len(self.windows)

    @property
    def start(self) -> int:
        return min(s for s, _ in self.windows)

    def __call__(self, step: int, pressure: np.ndarray) -> None:
        p = None
        for i, (s, e) in enumerate(self.windows):
            if s <= step < e:
                if p is None:
                    p = pressure.astype(np.float64)
                self.sums[i] += np.exp(-2j * np.pi * (step - s) / self.ppp) * p
                self.counts[i] += 1

    def amplitude(self, index: int = 0) -> np.ndarray:
        s, e = self.windows[index]
        if self.counts[index] != e - s:
            raise ValueError("window incomplete")
        return 2.0 / (e - s) * np.abs(self.sums[index])


def crop_roi(amplitude: ScalarField3D, ct: ScalarField3D, source: SourceSet | None, size: int):
    """Cut a ``size``^3 block around the source mask and the amplitude peak.

    The block is centred on the bounding box of the source voxels and the
    amplitude argmax, then shifted the least amount needed to stay inside
    the grid. Returns ``(ct_crop, pressure_crop, offset)``.
    """
    dims = np.asarray(amplitude.grid.dims)
    if amplitude.grid.dims != ct.grid.dims:
        raise ValueError("amplitude and CT grids differ")
    if np.any(size > dims):
        raise ValueError(f"crop size {size} exceeds grid dims {tuple(dims)}")
    marks = [np.asarray(amplitude.argmax())[None, :]]
    if source is not None and len(source.indices):
        marks.append(source.ijk())
    pts = np.concatenate(marks, axis=0)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    if np.any(hi - lo + 1 > size):
        raise ValueError(
            f"region of interest {tuple(hi - lo + 1)} voxels does not fit in a {size}^3 crop"
        )
    center = (lo + hi) / 2.0
    offset = np.floor(center - size / 2.0 + 0.5).astype(int)
    offset = np.clip(offset, 0, dims - size)
    sl = tuple(slice(o, o + size) for o in offset)
    origin = amplitude.grid.index_to_world(offset)
    g = GridSpec((size,) * 3, amplitude.grid.spacing, tuple(origin))
    return (
        ScalarField3D(g, ct.values[sl].copy(), ct.units),
        ScalarField3D(g, amplitude.values[sl].copy(), amplitude.units),
        tuple(int(o) for o in offset),
    )
