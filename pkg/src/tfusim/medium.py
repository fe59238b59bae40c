"""Hounsfield units to acoustic properties.

Density is linear in HU, sound speed linear in density, and absorption falls
with the square root of normalised HU. Voxels below a water threshold are
treated as water (including zero absorption).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .grid import GridSpec, ScalarField3D


@dataclass(frozen=True)
class HuMappingParams:
    rho_min: float = 1000.0
    rho_max: float = 1900.0
    c_min: float = 1500.0
    c_max: float = 3100.0
    alpha_min: float = 4.0
    alpha_max: float = 8.7
    hu_min: float = 300.0
    hu_max: float = 2000.0
    alpha_power: float = 1.1

    def __post_init__(self):
        for lo, hi in (("rho_min", "rho_max"), ("c_min", "c_max"),
                       ("alpha_min", "alpha_max"), ("hu_min", "hu_max")):
            if not getattr(self, lo) < getattr(self, hi):
                raise ValueError(f"{lo} must be < {hi}")
        if self.rho_min <= 0 or self.c_min <= 0 or self.alpha_min < 0:
            raise ValueError("rho_min and c_min must be positive, alpha_min non-negative")
        if not self.alpha_power > 0:
            raise ValueError("alpha_power must be > 0")
        if abs(self.alpha_power - 1.0) < 1e-9:
            # tan(pi*y/2) diverges in the dispersive absorption term
            raise ValueError(
                "alpha_power = 1 is singular for the power-law absorption operator; "
                "use a value such as 1.1 or 0.99"
            )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AcousticMedium:
    rho: ScalarField3D
    c: ScalarField3D
    alpha0: ScalarField3D
    alpha_power: float = 1.1
    c_ref: float | None = None

    def __post_init__(self):
        g = self.rho.grid
        if self.c.grid != g or self.alpha0.grid != g:
            raise ValueError("rho, c and alpha0 must share one grid")
        if np.any(self.rho.values <= 0):
            raise ValueError("density must be positive everywhere")
        cmax = float(self.c.values.max())
        if self.c_ref is None:
            self.c_ref = cmax
        elif self.c_ref < cmax - 1e-9:
            raise ValueError(f"c_ref {self.c_ref} is below max sound speed {cmax}")

    @property
    def grid(self) -> GridSpec:
        return self.rho.grid

    @property
    def absorbing(self) -> bool:
        return bool(np.any(self.alpha0.values > 0))

    @classmethod
    def homogeneous(cls, grid: GridSpec, rho=1000.0, c=1500.0, alpha0=0.0,
                    alpha_power=1.1) -> "AcousticMedium":
        full = lambda v, u: ScalarField3D(grid, np.full(grid.dims, float(v)), u)
        return cls(full(rho, "kg/m^3"), full(c, "m/s"), full(alpha0, "dB/(MHz^y cm)"),
                   alpha_power)


def hu_to_density(hu, p: HuMappingParams = HuMappingParams()):
    hu = np.clip(np.asarray(hu, dtype=np.float64), 0.0, p.hu_max)
    return p.rho_min + (p.rho_max - p.rho_min) * hu / p.hu_max


def density_to_sound_speed(rho, p: HuMappingParams = HuMappingParams()):
    rho = np.asarray(rho, dtype=np.float64)
    tol = 1e-9 * p.rho_max
    if np.any(rho < p.rho_min - tol) or np.any(rho > p.rho_max + tol):
        raise ValueError(f"density outside [{p.rho_min}, {p.rho_max}] kg/m^3")
    frac = (np.clip(rho, p.rho_min, p.rho_max) - p.rho_min) / (p.rho_max - p.rho_min)
    return p.c_min + (p.c_max - p.c_min) * frac


def hu_to_absorption(hu, p: HuMappingParams = HuMappingParams()):
    hu = np.clip(np.asarray(hu, dtype=np.float64), p.hu_min, p.hu_max)
    frac = (hu - p.hu_min) / (p.hu_max - p.hu_min)
    return p.alpha_min + (p.alpha_max - p.alpha_min) * (1.0 - np.sqrt(frac))


def resample_isotropic(field: ScalarField3D, target_spacing: float) -> ScalarField3D:
    """Trilinear resampling onto an isotropic grid with the same origin.

    The output spans the same first-to-last voxel-centre extent (rounded
    down to whole target voxels), so every output sample lies inside the
    input and linear fields are reproduced exactly.
    """
    if not target_spacing > 0:
        raise ValueError("target_spacing must be > 0")
    g = field.grid
    spacing = np.asarray(g.spacing)
    if np.all(np.abs(spacing - target_spacing) <= 1e-9):
        return field.copy()
    span = (np.asarray(g.dims) - 1) * spacing
    dims = tuple(int(np.floor(s / target_spacing + 1e-9)) + 1 for s in span)
    axes = [np.arange(n) * target_spacing / s for n, s in zip(dims, spacing)]
    coords = np.meshgrid(*axes, indexing="ij")
    values = ndimage.map_coordinates(
        field.values.astype(np.float64), coords, order=1, mode="nearest"
    )
    out_grid = GridSpec(dims, (target_spacing,) * 3, g.origin)
    return ScalarField3D(out_grid, values, field.units)


def build_medium(
    ct: ScalarField3D,
    p: HuMappingParams = HuMappingParams(),
    water_threshold: float | None = None,
) -> AcousticMedium:
    """Map a CT volume (HU) to density, sound speed and absorption.

    ``water_threshold`` defaults to ``p.hu_min``; voxels below it get water
    properties with zero absorption.
    """
    if not ct.grid.isotropic:
        raise ValueError("CT must be isotropic; call resample_isotropic first")
    thr = p.hu_min if water_threshold is None else water_threshold
    hu = ct.values.astype(np.float64)
    water = hu < thr
    rho = np.where(water, p.rho_min, hu_to_density(hu, p))
    c = np.where(water, p.c_min, density_to_sound_speed(rho, p))
    alpha = np.where(water, 0.0, hu_to_absorption(hu, p))
    g = ct.grid
    return AcousticMedium(
        ScalarField3D(g, rho, "kg/m^3"),
        ScalarField3D(g, c, "m/s"),
        ScalarField3D(g, alpha, "dB/(MHz^y cm)"),
        alpha_power=p.alpha_power,
        c_ref=float(c.max()),
    )
