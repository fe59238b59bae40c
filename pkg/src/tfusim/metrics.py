"""Comparisons between a predicted and a reference pressure field."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .grid import ScalarField3D

STD_CONVENTION = "population"


@dataclass(frozen=True)
class MetricParams:
    alpha_weight: float = 5.0
    lam: float = 0.1
    spacing: tuple = (0.5, 0.5, 0.5)

    def __post_init__(self):
        if self.alpha_weight < 0 or self.lam < 0:
            raise ValueError("alpha_weight and lam must be >= 0")
        if any(s <= 0 for s in self.spacing):
            raise ValueError("spacing must be positive")


@dataclass
class FieldMetrics:
    relative_l2: float
    focal_position_error: float
    max_pressure_error: float
    weighted_mse: float
    grad_loss: float
    composite: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["relative_l2_percent"] = 100.0 * self.relative_l2
        return d


def _arr(x) -> np.ndarray:
    return np.asarray(x.values if isinstance(x, ScalarField3D) else x, dtype=np.float64)


def _check(pred, gt):
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")


def relative_l2(pred, gt) -> float:
    pred, gt = _arr(pred), _arr(gt)
    _check(pred, gt)
    ref = np.sum(gt * gt)
    if ref == 0:
        raise ValueError("reference field has zero norm")
    return float(np.sqrt(np.sum((pred - gt) ** 2) / ref))


def peak_index(values) -> np.ndarray:
    """Argmax with ties broken by the lowest x-fastest linear index."""
    values = _arr(values)
    lin = int(np.argmax(values.ravel(order="F")))
    return np.array(np.unravel_index(lin, values.shape, order="F"))


def focal_position_error(pred, gt, spacing=(0.5, 0.5, 0.5)) -> float:
    """Distance in mm between the two argmax voxel centres."""
    pred, gt = _arr(pred), _arr(gt)
    _check(pred, gt)
    d = (peak_index(pred) - peak_index(gt)) * np.asarray(spacing, dtype=float)
    return float(np.linalg.norm(d))


def max_pressure_error(pred, gt) -> float:
    """Percent error of the peak value."""
    pred, gt = _arr(pred), _arr(gt)
    p_max = gt.max()
    if not p_max > 0:
        raise ValueError("reference maximum must be positive")
    return float(100.0 * abs(pred.max() - p_max) / p_max)


def focal_weights(gt, alpha_weight: float) -> np.ndarray:
    """``exp(a (gt - max gt))`` normalised to unit mean."""
    gt = _arr(gt)
    w = np.exp(alpha_weight * (gt - gt.max()))
    return w / w.mean()


def weighted_mse(pred, gt, alpha_weight: float = 5.0) -> float:
    pred, gt = _arr(pred), _arr(gt)
    _check(pred, gt)
    return float(np.mean(focal_weights(gt, alpha_weight) * (pred - gt) ** 2))


def gradient_loss(pred, gt, spacing=None) -> float:
    """Mean squared gradient mismatch averaged over the three axes.

    Central differences inside, one-sided at the faces. Gradients are per
    voxel unless ``spacing`` is given.
    """
    pred, gt = _arr(pred), _arr(gt)
    _check(pred, gt)
    if min(pred.shape) < 2:
        raise ValueError("every axis needs at least two voxels")
    diff = pred - gt
    steps = (1.0, 1.0, 1.0) if spacing is None else tuple(spacing)
    grads = np.gradient(diff, *steps)
    return float(sum(np.mean(g * g) for g in grads) / 3.0)


def composite_loss(pred, gt, params: MetricParams = MetricParams()) -> float:
    return weighted_mse(pred, gt, params.alpha_weight) + params.lam * gradient_loss(pred, gt)


def compute_metrics(pred, gt, params: MetricParams = MetricParams()) -> FieldMetrics:
    w = weighted_mse(pred, gt, params.alpha_weight)
    g = gradient_loss(pred, gt)
    return FieldMetrics(
        relative_l2=relative_l2(pred, gt),
        focal_position_error=focal_position_error(pred, gt, params.spacing),
        max_pressure_error=max_pressure_error(pred, gt),
        weighted_mse=w,
        grad_loss=g,
        composite=w + params.lam * g,
    )


def summarize(records) -> dict:
    """Median, mean and population std of every metric across samples."""
    records = list(records)
    if not records:
        raise ValueError("cannot summarise an empty list of metrics")
    rows = [r.to_dict() if isinstance(r, FieldMetrics) else dict(r) for r in records]
    names = [f.name for f in fields(FieldMetrics)] + ["relative_l2_percent"]
    out = {}
    for name in names:
        v = np.array([row[name] for row in rows], dtype=np.float64)
        out[name] = {
            "median": float(np.median(v)),
            "mean": float(np.mean(v)),
            "std": float(np.std(v, ddof=0)),
        }
    return out
