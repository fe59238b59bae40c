"""YAML simulation config: schema, validation and (de)serialisation.

Every key is consumed and unknown keys are rejected so that typos fail
early. See ``docs/config_example.yaml`` for an annotated example.
"""
from __future__ import annotations

import math
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .errors import ConfigError
from .medium import HuMappingParams
from .transducer import BowlTransducer

SCHEMA_VERSION = 1

# geometric limits accepted by the validator (mm)
ROC_BOUNDS = (1.0, 150.0)
DIAMETER_BOUNDS = (1.0, 150.0)


@dataclass
class PmlConfig:
    range: Optional[list] = field(default_factory=lambda: [10, 20])
    thickness: Optional[int] = None
    strength: float = 2.0
    order: float = 4.0


@dataclass
class TransducerConfig:
    position: list
    focus: list
    roc: float
    diameter: float
    amplitude: float = 60000.0
    phase_deg: float = 0.0
    ramp_cycles: float = 2.0


@dataclass
class SimConfig:
    subject_id: str
    ct_path: str
    transducer: TransducerConfig
    output_path: str
    seed: int = 0
    placement_index: int = 0
    f0: float = 500e3
    ppw: float = 6.0
    cfl: float = 0.3
    hu_mapping: HuMappingParams = field(default_factory=HuMappingParams)
    water_threshold: Optional[float] = None
    pml: PmlConfig = field(default_factory=PmlConfig)
    t_end_override: Optional[float] = None
    t_end_margin: float = 1.5
    n_record_periods: int = 3
    crop_size: int = 256
    point_spacing: Optional[float] = None
    compress: bool = True
    schema_version: int = SCHEMA_VERSION

    @property
    def c0(self) -> float:
        return self.hu_mapping.c_min

    @property
    def spacing(self) -> float:
        """Grid spacing in mm: ``c0 / (f0 ppw)``."""
        return self.c0 / (self.f0 * self.ppw) * 1e3

    def bowl(self) -> BowlTransducer:
        t = self.transducer
        return BowlTransducer(
            np.asarray(t.position, float), np.asarray(t.focus, float), t.roc, t.diameter,
            f0=self.f0, amplitude=t.amplitude, phase=math.radians(t.phase_deg),
            ramp_cycles=t.ramp_cycles,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        order = ["schema_version"] + [f.name for f in fields(self) if f.name != "schema_version"]
        return {k: _plain(d[k]) for k in order}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_yaml(), encoding="utf-8")


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


# ---------------------------------------------------------------- validation


def _take(d: dict, cls, prefix: str) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(prefix.rstrip("."), "expected a mapping")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(prefix + unknown[0], "unknown key")
    required = [f.name for f in fields(cls) if f.default is MISSING and f.default_factory is MISSING]
    for name in required:
        if name not in d:
            raise ConfigError(prefix + name, "missing required key")
    return d


def _positive(name: str, value, allow_zero: bool = False):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected a number, got {value!r}") from None
    if not math.isfinite(v) or v < 0 or (v == 0 and not allow_zero):
        raise ConfigError(name, f"must be {'non-negative' if allow_zero else 'positive'}, got {value!r}")
    return v


def _triple(name: str, value) -> list:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise ConfigError(name, "expected a list of three numbers")
    try:
        out = [float(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(name, "expected a list of three numbers") from None
    if not all(math.isfinite(v) for v in out):
        raise ConfigError(name, "values must be finite")
    return out


def config_from_dict(d: Any) -> SimConfig:
    if not isinstance(d, dict):
        raise ConfigError("<root>", "config must be a mapping")
    if "schema_version" not in d:
        raise ConfigError("schema_version", "missing; configs must declare schema_version")
    if d["schema_version"] != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {d['schema_version']!r}")
    _take(d, SimConfig, "")

    t = dict(_take(d["transducer"], TransducerConfig, "transducer."))
    t["position"] = _triple("transducer.position", t["position"])
    t["focus"] = _triple("transducer.focus", t["focus"])
    roc = _positive("transducer.roc", t["roc"])
    dia = _positive("transducer.diameter", t["diameter"])
    if not ROC_BOUNDS[0] <= roc <= ROC_BOUNDS[1]:
        raise ConfigError("transducer.roc", f"{roc} mm outside {ROC_BOUNDS}")
    if not DIAMETER_BOUNDS[0] <= dia <= DIAMETER_BOUNDS[1]:
        raise ConfigError("transducer.diameter", f"{dia} mm outside {DIAMETER_BOUNDS}")
    if dia > 2 * roc:
        raise ConfigError("transducer.diameter", f"{dia} mm exceeds 2*roc = {2 * roc} mm")
    dist = float(np.linalg.norm(np.subtract(t["focus"], t["position"])))
    if abs(dist - roc) > 1e-6:
        raise ConfigError("transducer.focus", f"|focus - position| = {dist:.6f} mm but roc = {roc}")
    t["roc"], t["diameter"] = roc, dia
    t["amplitude"] = _positive("transducer.amplitude", t.get("amplitude", 60000.0), allow_zero=True)
    t["phase_deg"] = float(t.get("phase_deg", 0.0))
    t["ramp_cycles"] = _positive("transducer.ramp_cycles", t.get("ramp_cycles", 2.0), allow_zero=True)
    transducer = TransducerConfig(**t)

    hu = dict(_take(d.get("hu_mapping", {}) or {}, HuMappingParams, "hu_mapping."))
    for k, v in hu.items():
        _positive("hu_mapping." + k, v, allow_zero=k.startswith(("alpha", "hu")))
    try:
        hu_params = HuMappingParams(**{k: float(v) for k, v in hu.items()})
    except ValueError as exc:
        raise ConfigError("hu_mapping", str(exc)) from None

    pml = dict(_take(d.get("pml", {}) or {}, PmlConfig, "pml."))
    pml_cfg = PmlConfig(**pml)
    if pml_cfg.thickness is not None:
        if int(pml_cfg.thickness) != pml_cfg.thickness or pml_cfg.thickness < 0:
            raise ConfigError("pml.thickness", "must be a non-negative integer")
        pml_cfg.thickness = int(pml_cfg.thickness)
    elif pml_cfg.range is None or len(pml_cfg.range) != 2 or not 0 <= pml_cfg.range[0] <= pml_cfg.range[1]:
        raise ConfigError("pml.range", "expected [lo, hi] with 0 <= lo <= hi")
    _positive("pml.strength", pml_cfg.strength, allow_zero=True)
    _positive("pml.order", pml_cfg.order)

    cfg = SimConfig(
        subject_id=str(d["subject_id"]),
        ct_path=str(d["ct_path"]),
        transducer=transducer,
        output_path=str(d["output_path"]),
        seed=int(d.get("seed", 0)),
        placement_index=int(d.get("placement_index", 0)),
        f0=_positive("f0", d.get("f0", 500e3)),
        ppw=_positive("ppw", d.get("ppw", 6.0)),
        cfl=_positive("cfl", d.get("cfl", 0.3)),
        hu_mapping=hu_params,
        water_threshold=None if d.get("water_threshold") is None else float(d["water_threshold"]),
        pml=pml_cfg,
        t_end_override=None if d.get("t_end_override") is None
        else _positive("t_end_override", d["t_end_override"]),
        t_end_margin=_positive("t_end_margin", d.get("t_end_margin", 1.5)),
        n_record_periods=int(_positive("n_record_periods", d.get("n_record_periods", 3))),
        crop_size=int(_positive("crop_size", d.get("crop_size", 256))),
        point_spacing=None if d.get("point_spacing") is None
        else _positive("point_spacing", d["point_spacing"]),
        compress=bool(d.get("compress", True)),
    )
    if cfg.ppw < 2:
        raise ConfigError("ppw", "must be >= 2")
    if cfg.cfl > 0.5:
        raise ConfigError("cfl", "must be <= 0.5")
    if cfg.t_end_margin < 1:
        raise ConfigError("t_end_margin", "must be >= 1")
    return cfg


def load_config(path) -> SimConfig:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError("<yaml>", str(exc)) from None
    return config_from_dict(data)
