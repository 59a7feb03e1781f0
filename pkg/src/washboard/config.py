"""Experiment configuration: one JSON document with unit-suffixed fields.

Field names carry their unit (``i0_uA``, ``c_pF``, ``t_mK``...) so values can
be copied straight from a lab notebook. :func:`load_config` validates the
document against :data:`SCHEMA`, builds every domain object once so that
invalid physics is caught before any run, and exposes SI accessors.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

import jsonschema
import numpy as np

from washboard.eigensolver import GridConfig
from washboard.errors import ConfigError
from washboard.junction import JunctionParams
from washboard.network import NetworkParams
from washboard.ramp import RampConfig
from washboard.rates import DriveParams, EnvironmentParams

SCHEMA_VERSION = 1

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


def _sweep(unit: str) -> dict:
    return _obj({f"start_{unit}": _NUM, f"stop_{unit}": _NUM, "n": {"type": "integer", "minimum": 1}},
                required=(f"start_{unit}", f"stop_{unit}", "n"))


SCHEMA = _obj(
    {
        "schema_version": {"const": SCHEMA_VERSION},
        "junction": _obj({"i0_uA": _POS, "c_pF": _POS, "t_mK": _NONNEG}, required=("i0_uA", "c_pF")),
        "environment": _obj({"r_ohm": {"oneOf": [_POS, {"type": "null"}]}, "sigma_i_nA": _NONNEG}),
        "network": _obj({"l_series_nH": _POS, "c_shunt_pF": _POS, "z_line_ohm": _POS}),
        "grid": _obj({
            "n_points": {"type": "integer", "minimum": 201},
            "gamma_lo": {"type": ["number", "null"]},
            "gamma_hi": {"type": ["number", "null"]},
        }),
        "ramp": _obj({
            "i_start_uA": _NONNEG,
            "i_max_uA": _POS,
            "di_dt_mA_per_s": _POS,
            "n_trials": {"type": "integer", "minimum": 1},
        }, required=("i_start_uA", "i_max_uA")),
        "drive": {"oneOf": [
            {"type": "null"},
            _obj({"f_GHz": _POS, "i_ac_nA": _NONNEG, "target_enhancement": _POS}, required=("f_GHz",)),
        ]},
        "bias_sweep": _sweep("uA"),
        "frequency_sweep": _sweep("GHz"),
        "analysis": _obj({
            "t_w_ns": _POS,
            "n_peaks": {"type": "integer", "minimum": 1, "maximum": 4},
            "min_counts": {"type": "integer", "minimum": 1},
            "slope_order": {"type": "integer", "minimum": 2, "maximum": 5},
        }),
        "lineshape": {"enum": ["voigt", "lorentzian"]},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "output_dir": {"type": "string"},
    },
    required=("schema_version", "junction"),
)

DEFAULTS: dict[str, Any] = {
    "environment": {"r_ohm": None, "sigma_i_nA": 5.0},
    "network": {"l_series_nH": 10.0, "c_shunt_pF": 10.0, "z_line_ohm": 50.0},
    "grid": {"n_points": 2001, "gamma_lo": None, "gamma_hi": None},
    "analysis": {"t_w_ns": 50.0, "n_peaks": 2, "min_counts": 1, "slope_order": 3},
    "drive": None,
    "lineshape": "voigt",
    "seed": 0,
    "output_dir": "out",
}


def _merge(defaults: dict, doc: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in doc.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = {**out[key], **value}
        else:
            out[key] = copy.deepcopy(value)
    return out


def _linspace(sweep: dict, unit: str, scale: float) -> np.ndarray:
    return np.linspace(sweep[f"start_{unit}"], sweep[f"stop_{unit}"], sweep["n"]) * scale


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated configuration document with SI accessors."""

    doc: dict

    @property
    def sha256(self) -> str:
        return config_hash(self.doc)

    @property
    def seed(self) -> int:
        return int(self.doc["seed"])

    @property
    def output_dir(self) -> Path:
        return Path(self.doc["output_dir"])

    @property
    def lineshape(self) -> str:
        return self.doc["lineshape"]

    def junction(self) -> JunctionParams:
        j = self.doc["junction"]
        return JunctionParams(i0=j["i0_uA"] * 1e-6, c=j["c_pF"] * 1e-12, t=j.get("t_mK", 0.0) * 1e-3)

    def network(self) -> NetworkParams:
        n = self.doc["network"]
        return NetworkParams(n["l_series_nH"] * 1e-9, n["c_shunt_pF"] * 1e-12, n["z_line_ohm"])

    def environment(self) -> EnvironmentParams:
        e = self.doc["environment"]
        return EnvironmentParams(r=e["r_ohm"], sigma_i=e["sigma_i_nA"] * 1e-9, network=self.network())

    def grid(self) -> GridConfig:
        g = self.doc["grid"]
        explicit = g["gamma_lo"] is not None or g["gamma_hi"] is not None
        return GridConfig(g["n_points"], g["gamma_lo"], g["gamma_hi"], auto_domain=not explicit)

    def ramp(self) -> Optional[RampConfig]:
        r = self.doc.get("ramp")
        if r is None:
            return None
        return RampConfig(
            i_start=r["i_start_uA"] * 1e-6,
            i_max=r["i_max_uA"] * 1e-6,
            di_dt=r.get("di_dt_mA_per_s", 5.0) * 1e-3,
            n_trials=r.get("n_trials", 10_000),
            seed=self.seed,
        )

    def drive(self) -> Optional[DriveParams]:
        """Drive with a fixed amplitude, or None (also None when only a target is given)."""
        d = self.doc.get("drive")
        if d is None or "i_ac_nA" not in d:
            return None
        return DriveParams(i_ac=d["i_ac_nA"] * 1e-9, omega_d=2.0 * np.pi * d["f_GHz"] * 1e9)

    def drive_target(self) -> Optional[tuple[float, float]]:
        """(omega_d, target enhancement) when the amplitude is to be calibrated."""
        d = self.doc.get("drive")
        if d is None or "i_ac_nA" in d:
            return None
        return 2.0 * np.pi * d["f_GHz"] * 1e9, d.get("target_enhancement", 10.0)

    def biases(self) -> Optional[np.ndarray]:
        s = self.doc.get("bias_sweep")
        return None if s is None else _linspace(s, "uA", 1e-6)

    def frequencies(self) -> Optional[np.ndarray]:
        s = self.doc.get("frequency_sweep")
        return None if s is None else _linspace(s, "GHz", 1e9)

    @property
    def analysis(self) -> dict:
        return dict(self.doc["analysis"])

    def with_overrides(self, seed: Optional[int] = None, output_dir: Optional[str] = None) -> "ExperimentConfig":
        doc = copy.deepcopy(self.doc)
        if seed is not None:
            doc["seed"] = seed
        if output_dir is not None:
            doc["output_dir"] = output_dir
        return validate_config(doc)


def config_hash(doc: dict) -> str:
    """SHA-256 of the canonical JSON form of ``doc``."""
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()


def validate_config(doc: dict) -> ExperimentConfig:
    """Schema-check ``doc``, fill defaults and build every domain object.

    Raises
    ------
    ConfigError
        On unknown keys, wrong types, or physically invalid values.
    """
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {where}: {exc.message}") from None
    cfg = ExperimentConfig(_merge(DEFAULTS, doc))
    try:
        p = cfg.junction()
        cfg.environment()
        cfg.grid()
        ramp = cfg.ramp()
        cfg.drive()
        if ramp is not None and ramp.i_max > p.i0:
            raise ValueError("ramp i_max exceeds the critical current")
        b = cfg.biases()
        if b is not None and np.any(b >= p.i0):
            raise ValueError("bias sweep reaches the critical current")
        f = cfg.frequencies()
        if f is not None and np.any(f < 0):
            raise ValueError("frequency sweep has negative frequencies")
    except ValueError as exc:
        raise ConfigError(f"config: {exc}") from None
    return cfg


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return validate_config(doc)
