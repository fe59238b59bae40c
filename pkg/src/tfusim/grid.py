"""Grid metadata and the dense scalar volume used throughout the package."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

UNITS = ("HU", "kg/m^3", "m/s", "dB/(MHz^y cm)", "Pa", "dimensionless")

Triple = Tuple[float, float, float]


@dataclass(frozen=True)
class GridSpec:
    """Voxel grid: ``dims`` in voxels, ``spacing`` and ``origin`` in mm.

    ``origin`` is the world position of the centre of voxel (0, 0, 0).
    """

    dims: Tuple[int, int, int]
    spacing: Triple
    origin: Triple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
            raise ValueError("dims, spacing and origin must all have three components")
        if any(d < 1 for d in dims):
            raise ValueError(f"all dims must be >= 1, got {dims}")
        if any(not s > 0 for s in spacing):
            raise ValueError(f"all spacing components must be > 0, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def cube(cls, n: int, spacing: float, origin: Triple = (0.0, 0.0, 0.0)) -> "GridSpec":
        return cls((n, n, n), (spacing, spacing, spacing), origin)

    @property
    def isotropic(self) -> bool:
        s = self.spacing
        return abs(s[0] - s[1]) <= 1e-9 and abs(s[0] - s[2]) <= 1e-9

    @property
    def size(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def extent(self) -> np.ndarray:
        """Physical edge-to-edge size in mm."""
        return np.asarray(self.dims) * np.asarray(self.spacing)

    @property
    def center(self) -> np.ndarray:
        """World coordinate (mm) of the geometric grid centre."""
        return np.asarray(self.origin) + (np.asarray(self.dims) - 1) / 2.0 * np.asarray(self.spacing)

    def index_to_world(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk, dtype=float)
        return np.asarray(self.origin) + ijk * np.asarray(self.spacing)

    def world_to_index(self, xyz) -> np.ndarray:
        """Continuous (fractional) voxel index of a world position."""
        xyz = np.asarray(xyz, dtype=float)
        return (xyz - np.asarray(self.origin)) / np.asarray(self.spacing)

    def linear_index(self, i, j, k):
        """x-fastest linear index."""
        nx, ny, _ = self.dims
        return np.asarray(i) + nx * (np.asarray(j) + ny * np.asarray(k))

    def unravel(self, linear):
        nx, ny, _ = self.dims
        linear = np.asarray(linear)
        return linear % nx, (linear // nx) % ny, linear // (nx * ny)


@dataclass
class ScalarField3D:
    """A dense scalar volume indexed ``values[i, j, k]`` with x along axis 0.

    The linear voxel order used by file formats and by :class:`SourceSet`
    nodes is x-fastest (``GridSpec.linear_index``).
    """

    grid: GridSpec
    values: np.ndarray
    units: str = "dimensionless"

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != self.grid.dims:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid dims {self.grid.dims}"
            )
        if self.units not in UNITS:
            raise ValueError(f"unknown unit label {self.units!r}; expected one of {UNITS}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    def with_values(self, values, units: str | None = None) -> "ScalarField3D":
        return ScalarField3D(self.grid, values, self.units if units is None else units)

    def linear(self) -> np.ndarray:
        """Values flattened in x-fastest order."""
        return self.values.ravel(order="F")

    def argmax(self) -> Tuple[int, int, int]:
        """Index of the maximum; ties go to the lowest x-fastest linear index."""
        lin = int(np.argmax(self.linear()))
        return tuple(int(v) for v in self.grid.unravel(lin))

    def copy(self) -> "ScalarField3D":
        return replace(self, values=self.values.copy())
