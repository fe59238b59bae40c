"""k-space pseudo-spectral solver for linear acoustics in heterogeneous media.

Coupled first-order equations on a staggered grid::

    du/dt   = -1/rho0 grad p
    drho/dt = -rho0 div u + mass source
    p       = c0^2 (rho + absorption/dispersion terms)

Spatial derivatives are taken with FFTs, multiplied by the k-space
correction ``kappa = sinc(c_ref |k| dt / 2)``, which makes the leapfrog
scheme exact for a homogeneous medium with ``c0 = c_ref``. The domain is
padded with a split-field PML on every side. Absorption follows a frequency
power law through two fractional Laplacians.
"""
from __future__ import annotations

import math
import sys
import time as _time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

from .errors import DivergenceError
from .grid import GridSpec
from .medium import AcousticMedium
from .transducer import SourceSet, drive_signal

# Scale applied to the additive mass source. With the 2 dt / (c dx) factor
# a planar sheet of nodes launches plane waves of amplitude equal to the
# drive pressure on both sides, so no empirical correction is needed.
SOURCE_CALIBRATION = 1.0

MM = 1e-3


# ------------------------------------------------------------- time stepping


@dataclass
class TimeParams:
    dt: float
    n_steps: int
    ppp: int
    cfl: float
    t_end: float
    f0: float

    def __post_init__(self):
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")

    @property
    def period_steps(self) -> int:
        return self.ppp


def cfl_bound(spacing_mm: float, c_ref: float) -> float:
    """Largest stable time step ``dx / (sqrt(3) c_ref)`` in seconds."""
    return spacing_mm * MM / (math.sqrt(3.0) * c_ref)


def make_time_params(
    f0: float,
    ppw: float,
    cfl: float,
    grid: GridSpec,
    medium: AcousticMedium | None = None,
    c_ref: float | None = None,
    t_end: float | None = None,
    n_periods: int = 3,
    margin: float = 1.5,
) -> TimeParams:
    """Pick ``ppp = ceil(ppw / cfl)`` then raise it until the CFL bound holds.

    In absorbing media the bound also includes :func:`absorption_dt_limit`.

    ``dt = 1 / (ppp f0)`` so each acoustic period is a whole number of steps.
    ``t_end`` defaults to :func:`tfusim.extract.estimate_t_end`.
    """
    if not 0 < cfl <= 0.5:
        raise ValueError("cfl must be in (0, 0.5]")
    if ppw < 2:
        raise ValueError("ppw must be >= 2")
    if c_ref is None:
        if medium is None:
            raise ValueError("either medium or c_ref is required")
        c_ref = float(medium.c_ref)
    ppp = max(1, math.ceil(ppw / cfl - 1e-9))
    bound = cfl_bound(min(grid.spacing), c_ref)
    if medium is not None and medium.absorbing:
        bound = min(bound, absorption_dt_limit(medium, min(grid.spacing), c_ref))
    while 1.0 / (ppp * f0) > bound * (1 + 1e-12):
        ppp += 1
    dt = 1.0 / (ppp * f0)
    if t_end is None:
        from .extract import estimate_t_end

        c_min = float(medium.c.values.min()) if medium is not None else c_ref
        t_end = estimate_t_end(grid, c_min, margin=margin, n_periods=n_periods, f0=f0)
    n_steps = int(math.ceil(t_end / dt - 1e-9))
    return TimeParams(dt=dt, n_steps=n_steps, ppp=ppp, cfl=cfl, t_end=float(t_end), f0=f0)


def absorption_dt_limit(medium: AcousticMedium, spacing_mm: float, c_ref: float,
                        safety: float = 0.95) -> float:
    """Largest stable dt once absorption dispersion is accounted for.

    The fractional-Laplacian dispersion term stiffens the medium at high
    wavenumber: the effective speed at ``k`` is ``c sqrt(1 - eta k^(y-1))``
    (``eta < 0`` for ``y > 1``), which can exceed ``c_ref``. The k-space
    leapfrog stays stable while ``(c_eff / c_ref) sin(c_ref k dt / 2) <= 1``
    for every resolved ``k``; this solves that at the grid corner wavenumber
    with a safety factor. Returns ``inf`` when no restriction applies.
    """
    y = medium.alpha_power
    kmax = math.sqrt(3.0) * math.pi / (spacing_mm * MM)
    a_np = db_to_neper(medium.alpha0.values.astype(np.float64), y)
    c = medium.c.values.astype(np.float64)
    eta = 2.0 * a_np * c**y * math.tan(math.pi * y / 2.0)
    stiff = 1.0 - eta * kmax ** (y - 1.0)
    ratio = float((c * np.sqrt(np.maximum(stiff, 1.0))).max()) / c_ref
    if ratio * safety <= 1.0:
        return math.inf
    return 2.0 * math.asin(safety / ratio) / (c_ref * kmax)


# ----------------------------------------------------------------------- PML


@dataclass
class PmlProfile:
    """Per-axis absorption (nepers/s) on the padded grid.

    ``sigma[a]`` sits on the collocated points and ``sigma_sg[a]`` on the
    staggered velocity points (shifted by +half a voxel).
    """

    thickness: tuple
    strength: float
    order: float
    sigma: list
    sigma_sg: list

    def factors(self, dt: float, staggered: bool = False) -> list:
        src = self.sigma_sg if staggered else self.sigma
        return [np.exp(-s * dt / 2.0) for s in src]


def _pml_axis(n: int, t: int, strength: float, order: float, c_ref: float, dx_m: float,
              shift: float) -> np.ndarray:
    if t == 0:
        return np.zeros(n)
    s = np.arange(n) + shift
    left = np.maximum(0.0, t - s)
    right = np.maximum(0.0, s - (n - 1 - t))
    depth = np.maximum(left, right)
    return strength * (c_ref / dx_m) * (depth / t) ** order


def build_pml(thickness, strength: float, order: float, padded_dims: Sequence[int],
              spacing_mm: Sequence[float], c_ref: float) -> PmlProfile:
    """Polynomial PML profiles for a grid already padded by ``thickness``.

    ``thickness`` is an int or a per-axis triple (voxels per side).
    """
    if np.isscalar(thickness):
        thickness = (int(thickness),) * 3
    thickness = tuple(int(t) for t in thickness)
    if any(t < 0 for t in thickness):
        raise ValueError("PML thickness must be >= 0")
    sigma, sigma_sg = [], []
    for n, t, dx in zip(padded_dims, thickness, spacing_mm):
        sigma.append(_pml_axis(n, t, strength, order, c_ref, dx * MM, 0.0))
        sigma_sg.append(_pml_axis(n, t, strength, order, c_ref, dx * MM, 0.5))
    return PmlProfile(thickness, float(strength), float(order), sigma, sigma_sg)


def largest_prime_factor(n: int) -> int:
    if n < 2:
        return n
    best, f = 1, 2
    while f * f <= n:
        while n % f == 0:
            best, n = f, n // f
        f += 1
    return max(best, n) if n > 1 else best


def choose_pml_size(n: int, search_range=(10, 20)) -> int:
    """PML thickness in ``search_range`` giving the smoothest padded FFT size."""
    lo, hi = int(search_range[0]), int(search_range[-1])
    if hi < lo:
        raise ValueError("empty PML search range")
    return min(range(lo, hi + 1), key=lambda t: (largest_prime_factor(n + 2 * t), t))


# --------------------------------------------------------- spectral operators


def _sinc(x):
    return np.sinc(x / np.pi)


class KSpaceOperators:
    """Wavenumber grids and derivative multipliers for real-to-complex FFTs.

    The last axis is the halved (rfft) axis. Nyquist entries of the odd
    derivative operators are zeroed.
    """

    def __init__(self, shape, spacing_mm, c_ref: float | None = None, dt: float | None = None):
        self.shape = tuple(int(s) for s in shape)
        self.spacing = tuple(float(s) * MM for s in spacing_mm)
        self.k = []
        for a, (n, d) in enumerate(zip(self.shape, self.spacing)):
            if a == 2:
                k = 2 * np.pi * sfft.rfftfreq(n, d)
            else:
                k = 2 * np.pi * sfft.fftfreq(n, d)
            bshape = [1, 1, 1]
            bshape[a] = k.size
            self.k.append(k.reshape(bshape))
        self.kmag = np.sqrt(self.k[0] ** 2 + self.k[1] ** 2 + self.k[2] ** 2)
        if c_ref is not None and dt is not None:
            self.kappa = _sinc(c_ref * self.kmag * dt / 2.0)
            self.source_kappa = np.cos(c_ref * self.kmag * dt / 2.0)
        else:
            self.kappa = np.ones_like(self.kmag)
            self.source_kappa = np.ones_like(self.kmag)

    def derivative(self, axis: int, shift: float = 0.0) -> np.ndarray:
        """``i k exp(i k shift dx)`` along ``axis`` with the Nyquist bin zeroed."""
        k = self.k[axis]
        d = self.spacing[axis]
        op = 1j * k * np.exp(1j * k * shift * d)
        n = self.shape[axis]
        if n % 2 == 0:
            flat = op.reshape(-1).copy()
            flat[-1 if axis == 2 else n // 2] = 0.0
            op = flat.reshape(op.shape)
        return op

    def deposition_compensation(self, max_gain: float = 4.0) -> np.ndarray:
        """Inverse of the trilinear kernel's transfer function, gain-limited."""
        h = np.ones_like(self.kmag)
        for k, d in zip(self.k, self.spacing):
            h = h * _sinc(k * d / 2.0) ** 2
        return np.minimum(1.0 / np.maximum(h, 1e-12), max_gain)


def spectral_gradient(values: np.ndarray, axis: int, spacing_mm, shift: float = 0.0,
                      c_ref: float | None = None, dt: float | None = None) -> np.ndarray:
    """FFT derivative (per metre) of a periodic field along ``axis``.

    ``shift`` of +0.5/-0.5 evaluates the derivative on the grid staggered by
    half a voxel. When ``c_ref`` and ``dt`` are given the k-space correction
    ``kappa`` is applied.
    """
    if np.isscalar(spacing_mm):
        spacing_mm = (spacing_mm,) * 3
    values = np.asarray(values)
    ops = KSpaceOperators(values.shape, spacing_mm, c_ref, dt)
    spec = sfft.rfftn(values)
    spec = spec * ops.derivative(axis, shift) * ops.kappa
    return sfft.irfftn(spec, s=values.shape)


# ---------------------------------------------------------------- absorption


def db_to_neper(alpha_db, y: float):
    """dB/(MHz^y cm) to Np/((rad/s)^y m)."""
    return 100.0 * np.asarray(alpha_db) * (1e-6 / (2.0 * np.pi)) ** y / (20.0 * np.log10(np.e))


def power_law_neper_per_m(alpha_db, y: float, f: float):
    """Attenuation in Np/m at frequency ``f`` (Hz)."""
    return db_to_neper(alpha_db, y) * (2.0 * np.pi * f) ** y


# --------------------------------------------------------------------- state


@dataclass
class WaveState:
    p: np.ndarray
    rho: list
    u: list
    step_index: int = 0

    @classmethod
    def zeros(cls, shape, dtype=np.float32) -> "WaveState":
        z = lambda: np.zeros(shape, dtype=dtype)
        return cls(z(), [z(), z(), z()], [z(), z(), z()], 0)

    def copy(self) -> "WaveState":
        return WaveState(self.p.copy(), [r.copy() for r in self.rho],
                         [v.copy() for v in self.u], self.step_index)


@dataclass
class RunSummary:
    steps: int
    wall_time: float
    peak_memory_bytes: int
    recorded_steps: int = 0
    info: dict = field(default_factory=dict)


Recorder = Callable[[int, np.ndarray], None]


class KSpaceSolver:
    """One simulation: padded medium, PML, source pattern and wave state.

    ``pml_thickness`` is an int or a per-axis triple of voxels added on each
    side of the medium grid. ``workers`` is forwarded to ``scipy.fft``.
    ``absorption_dispersion=False`` drops the dispersive (eta) absorption
    term, keeping only the loss term.
    """

    def __init__(
        self,
        medium: AcousticMedium,
        time_params: TimeParams,
        source: SourceSet | None = None,
        pml_thickness=10,
        pml_strength: float = 2.0,
        pml_order: float = 4.0,
        source_calibration: float = SOURCE_CALIBRATION,
        deposition_compensation: bool = True,
        absorption_dispersion: bool = True,
        dtype=np.float32,
        workers: int | None = None,
    ):
        self.medium = medium
        self.tp = time_params
        self.source = source
        self.dtype = np.dtype(dtype)
        self.cdtype = np.result_type(self.dtype, np.complex64)
        self.workers = workers
        grid = medium.grid
        self.grid = grid
        if np.isscalar(pml_thickness):
            pml_thickness = (int(pml_thickness),) * 3
        self.pml_thickness = tuple(int(t) for t in pml_thickness)
        self.shape = tuple(n + 2 * t for n, t in zip(grid.dims, self.pml_thickness))
        self.interior = tuple(slice(t, t + n) for n, t in zip(grid.dims, self.pml_thickness))
        dt = time_params.dt
        self.c_ref = float(medium.c_ref)
        if dt > cfl_bound(min(grid.spacing), self.c_ref) * (1 + 1e-9):
            raise ValueError("time step violates the CFL bound for this medium")

        pad = [(t, t) for t in self.pml_thickness]
        rho0 = np.pad(medium.rho.values.astype(np.float64), pad, mode="edge")
        c0 = np.pad(medium.c.values.astype(np.float64), pad, mode="edge")
        self.rho0 = rho0.astype(self.dtype)
        self.c0sq = (c0 ** 2).astype(self.dtype)

        # staggered density by harmonic averaging of neighbours (edge-replicated)
        self.inv_rho_sg_dt = []
        for a in range(3):
            nxt = np.concatenate(
                [np.delete(rho0, 0, axis=a), np.take(rho0, [-1], axis=a)], axis=a
            )
            inv = 0.5 * (1.0 / rho0 + 1.0 / nxt)
            self.inv_rho_sg_dt.append((dt * inv).astype(self.dtype))
        self.rho0_dt = (dt * rho0).astype(self.dtype)

        self.ops = KSpaceOperators(self.shape, grid.spacing, self.c_ref, dt)
        kappa = self.ops.kappa
        self.d_pos = [(self.ops.derivative(a, +0.5)).astype(self.cdtype) for a in range(3)]
        self.d_neg = [(self.ops.derivative(a, -0.5)).astype(self.cdtype) for a in range(3)]
        self.kappa = kappa.astype(self.dtype)

        self.pml = build_pml(self.pml_thickness, pml_strength, pml_order, self.shape,
                             grid.spacing, self.c_ref)
        self.pml_c = [self._bshape(f, a) for a, f in enumerate(self.pml.factors(dt, False))]
        self.pml_sg = [self._bshape(f, a) for a, f in enumerate(self.pml.factors(dt, True))]

        self.absorbing = medium.absorbing
        self.dispersive = self.absorbing and absorption_dispersion
        if self.absorbing:
            y = medium.alpha_power
            alpha = np.pad(medium.alpha0.values.astype(np.float64), pad, mode="edge")
            a_np = db_to_neper(alpha, y)
            self.tau = (-2.0 * a_np * c0 ** (y - 1.0)).astype(self.dtype)
            self.eta = (2.0 * a_np * c0 ** y * np.tan(np.pi * y / 2.0)).astype(self.dtype)
            if not absorption_dispersion:
                self.eta[:] = 0.0
            with np.errstate(divide="ignore"):
                n1 = np.where(self.ops.kmag > 0, self.ops.kmag ** (y - 2.0), 0.0)
                n2 = np.where(self.ops.kmag > 0, self.ops.kmag ** (y - 1.0), 0.0)
            self.nabla1 = n1.astype(self.dtype)
            self.nabla2 = n2.astype(self.dtype)

        self.source_pattern = None
        if source is not None:
            self.source_pattern = self._build_source_pattern(
                source, c0, source_calibration, deposition_compensation
            )
        self.state = WaveState.zeros(self.shape, self.dtype)

    # -- setup helpers

    @staticmethod
    def _bshape(arr, axis):
        shape = [1, 1, 1]
        shape[axis] = arr.size
        return arr.reshape(shape).astype(np.float32)

    def _build_source_pattern(self, source: SourceSet, c0_padded, calibration, compensate):
        if source.grid.dims != self.grid.dims:
            raise ValueError("source grid does not match medium grid")
        dx = float(np.mean(self.grid.spacing)) * MM
        area = source.area_per_point * MM * MM if source.area_per_point > 0 else dx * dx
        ijk = source.ijk() + np.asarray(self.pml_thickness)
        c_local = c0_padded[ijk[:, 0], ijk[:, 1], ijk[:, 2]]
        strength = source.weights * (area / dx ** 2) * 2.0 * self.tp.dt / (c_local * dx)
        vol = np.zeros(self.shape)
        vol[ijk[:, 0], ijk[:, 1], ijk[:, 2]] = calibration * strength
        spec = sfft.rfftn(vol)
        spec *= self.ops.source_kappa
        if compensate:
            spec *= self.ops.deposition_compensation()
        # the gradient operators cannot move DC or Nyquist content, so any
        # injected there would pump a spurious field across the whole grid
        spec[0, 0, 0] = 0.0
        for a, n in enumerate(self.shape):
            if n % 2 == 0:
                idx = [slice(None)] * 3
                idx[a] = -1 if a == 2 else n // 2
                spec[tuple(idx)] = 0.0
        pattern = sfft.irfftn(spec, s=self.shape)
        # each split density component receives a third of the mass source
        return (pattern / 3.0).astype(self.dtype)

    # -- state management

    def set_initial_pressure(self, p0: np.ndarray) -> None:
        """Start from pressure ``p0`` (interior grid) at rest, k-Wave style.

        The velocity is set at t = -dt/2 so that the first update is
        centred in time.
        """
        st = WaveState.zeros(self.shape, self.dtype)
        st.p[self.interior] = p0
        rho_each = st.p / (3.0 * self.c0sq)
        st.rho = [rho_each.copy() for _ in range(3)]
        spec = self._fft(st.p) * self.kappa
        for a in range(3):
            grad = self._ifft(spec * self.d_pos[a])
            st.u[a] = (0.5 * self.inv_rho_sg_dt[a] * grad).astype(self.dtype)
        self.state = st

    def _fft(self, x):
        return sfft.rfftn(x, workers=self.workers)

    def _ifft(self, x):
        return sfft.irfftn(x, s=self.shape, workers=self.workers)

    def pressure(self) -> np.ndarray:
        """Current pressure on the unpadded grid (a view)."""
        return self.state.p[self.interior]

    # -- time stepping

    def step(self, drive_value: float | None = None) -> WaveState:
        """Advance the state by one time step (in place)."""
        st = self.state
        n_next = st.step_index + 1
        p_spec = self._fft(st.p)
        p_spec *= self.kappa
        for a in range(3):
            grad = self._ifft(p_spec * self.d_pos[a])
            u = st.u[a]
            u *= self.pml_sg[a]
            grad *= self.inv_rho_sg_dt[a]
            u -= grad
            u *= self.pml_sg[a]

        div_sum = None
        for a in range(3):
            u_spec = self._fft(st.u[a])
            u_spec *= self.kappa
            u_spec *= self.d_neg[a]
            div = self._ifft(u_spec)
            r = st.rho[a]
            r *= self.pml_c[a]
            r -= self.rho0_dt * div
            r *= self.pml_c[a]
            if self.absorbing:
                div_sum = div if div_sum is None else div_sum + div

        if self.source_pattern is not None:
            if drive_value is None:
                drive_value = float(drive_signal(self.source.drive, n_next * self.tp.dt))
            if drive_value != 0.0:
                inc = self.source_pattern * self.dtype.type(drive_value)
                for r in st.rho:
                    r += inc

        rho_sum = st.rho[0] + st.rho[1] + st.rho[2]
        if self.absorbing:
            term1 = self._ifft(self.nabla1 * self._fft(self.rho0 * div_sum))
            if self.dispersive:
                term2 = self._ifft(self.nabla2 * self._fft(rho_sum))
                rho_sum -= self.eta * term2
            rho_sum += self.tau * term1
        np.multiply(self.c0sq, rho_sum, out=st.p)
        st.step_index = n_next
        if not np.isfinite(st.p.sum(dtype=np.float64)):
            raise DivergenceError(n_next)
        return st

    def run(
        self,
        recorder: Recorder | None = None,
        record_start: int | None = None,
        n_steps: int | None = None,
        progress: int = 0,
    ) -> RunSummary:
        """Execute ``n_steps`` steps (default from the time params).

        ``recorder(step_index, pressure)`` is called after every step whose
        index is ``>= record_start``; ``pressure`` is the unpadded field and
        only valid during the call.
        """
        total = self.tp.n_steps if n_steps is None else int(n_steps)
        start = total if record_start is None else int(record_start)
        if self.source is not None and self.source.drive is not None:
            times = (self.state.step_index + 1 + np.arange(total)) * self.tp.dt
            drive = drive_signal(self.source.drive, times)
        else:
            drive = np.zeros(total)
        t0 = _time.perf_counter()
        recorded = 0
        for n in range(total):
            self.step(float(drive[n]))
            if recorder is not None and n >= start:
                recorder(n, self.pressure())
                recorded += 1
            if progress and ((n + 1) % progress == 0 or n + 1 == total):
                print(f"step {n + 1}/{total}, max|p|={np.abs(self.state.p).max():.4g}",
                      file=sys.stderr)
        wall = _time.perf_counter() - t0
        return RunSummary(total, wall, self.memory_estimate(), recorded)

    def memory_estimate(self) -> int:
        """Bytes held by the solver's persistent arrays plus FFT scratch."""
        arrays = [self.rho0, self.c0sq, self.rho0_dt, self.kappa, *self.inv_rho_sg_dt,
                  *self.d_pos, *self.d_neg, self.state.p, *self.state.rho, *self.state.u]
        if self.absorbing:
            arrays += [self.tau, self.eta, self.nabla1, self.nabla2]
        if self.source_pattern is not None:
            arrays.append(self.source_pattern)
        held = sum(a.nbytes for a in arrays)
        scratch = 4 * int(np.prod(self.shape)) * self.dtype.itemsize
        return held + scratch


def energy(solver: KSpaceSolver, u_prev: Sequence[np.ndarray] | None = None) -> float:
    """Acoustic energy of the current state, summed in double precision.

    With ``u_prev`` (velocities one half-step earlier) the kinetic part uses
    ``u_prev . u`` which is the quantity the leapfrog scheme conserves.
    """
    st = solver.state
    rho0 = solver.rho0.astype(np.float64)
    c0sq = solver.c0sq.astype(np.float64)
    pot = np.sum(st.p.astype(np.float64) ** 2 / (rho0 * c0sq))
    kin = 0.0
    for a in range(3):
        u = st.u[a].astype(np.float64)
        other = u if u_prev is None else np.asarray(u_prev[a], dtype=np.float64)
        kin += np.sum(rho0 * u * other)
    vol = np.prod(solver.grid.spacing) * MM ** 3
    return 0.5 * (pot + kin) * vol
