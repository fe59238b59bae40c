"""Full-wave transcranial focused ultrasound simulation on CPU.

Pseudo-CT volumes are mapped to acoustic properties, a focused bowl source
is rasterised onto the grid, a k-space pseudo-spectral solver propagates the
continuous-wave field, and the steady-state amplitude at the drive frequency
is cropped and written as an ``.npz`` artifact.
"""

__version__ = "0.1.0"

from .grid import GridSpec, ScalarField3D

__all__ = ["GridSpec", "ScalarField3D", "__version__"]
