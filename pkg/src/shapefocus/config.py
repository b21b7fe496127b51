"""JSON configuration with built-in defaults.

Every section is optional; missing keys fall back to :data:`DEFAULTS`.
Unknown sections or keys are rejected so typos surface as config errors.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, CameraRig, LensConfig
from .cost import CostParams
from .exceptions import ConfigError, ShapeFocusError
from .rig import RigSpec, generate_rig
from .robustness import NoiseSpec, SwaySpec

DEFAULTS: dict = {
    "mesh": {"path": None, "phantom": "humanoid", "unit_scale": 1.0, "n_samples": 10000,
             "seed": 0, "orient": "parity"},
    "rig_spec": asdict(RigSpec()),
    "rig": None,
    "lens": {k: v for k, v in asdict(LensConfig()).items()},
    "intrinsics": {k: v for k, v in asdict(CameraIntrinsics()).items() if k not in ("cx", "cy")},
    "cost": {k: v for k, v in asdict(CostParams()).items() if k != "em_eps"},
    "em": {"init": "average", "max_iters": 50, "em_eps": 1e-3},
    "tsdf": {"enabled": False, "n_views": 36, "voxel_size": 5.0, "radius": 1000.0,
             "heights": [-600.0, 0.0, 600.0], "noise_sigma": 0.0, "plan_on_reconstruction": False},
    "robustness": {"enabled": False, "trials": 30, "noise": asdict(NoiseSpec()),
                   "sway": asdict(SwaySpec()), "sway_trials": 0},
    "output": {"dir": "shapefocus-out", "dump_points": False},
    "stages": {"skip": []},
}

# unit-suffixed spellings accepted on input
ALIASES = {
    "lens": {"focal_length_mm": "focal_length", "coc_mm": "coc"},
    "intrinsics": {"width_px": "width", "height_px": "height", "pixel_pitch_mm": "pixel_pitch"},
}

STAGES = ("sample", "tsdf", "optimize", "metrics", "robustness", "report")


def defaults() -> dict:
    return copy.deepcopy(DEFAULTS)


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict) and key not in ("rig",):
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def load_config(source=None) -> dict:
    """Defaults merged with a JSON file path or an already parsed dict."""
    if source is None:
        return defaults()
    if isinstance(source, dict):
        data = source
    else:
        try:
            data = json.loads(Path(source).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {source}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = _merge(DEFAULTS, _canonical(data))
    if cfg["mesh"]["path"] is None and cfg["mesh"]["phantom"] not in ("humanoid", "sphere"):
        raise ConfigError("mesh.phantom must be 'humanoid' or 'sphere' when no path is given")
    bad = set(cfg["stages"]["skip"]) - set(STAGES)
    if bad:
        raise ConfigError(f"unknown stage(s) to skip: {sorted(bad)}")
    # build once so invalid values fail here rather than mid-run
    lens_of(cfg), intrinsics_of(cfg), cost_params_of(cfg), rig_spec_of(cfg)
    if cfg["rig"] is not None:
        rig_of(cfg)
    return cfg


def _canonical(data: dict) -> dict:
    data = dict(data)
    for section, names in ALIASES.items():
        if isinstance(data.get(section), dict):
            data[section] = {names.get(k, k): v for k, v in data[section].items()}
    if "cameras" in data:
        if data.get("rig") is not None:
            raise ConfigError("give either 'cameras' or 'rig', not both")
        data["rig"] = {"cameras": data.pop("cameras")}
    return data


def _build(cls, section: dict, name: str):
    known = {f.name for f in fields(cls)}
    extra = set(section) - known
    if extra:
        raise ConfigError(f"{name}: unknown key(s) {sorted(extra)}")
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def lens_of(cfg) -> LensConfig:
    return _build(LensConfig, cfg["lens"], "lens")


def intrinsics_of(cfg) -> CameraIntrinsics:
    return _build(CameraIntrinsics, cfg["intrinsics"], "intrinsics")


def cost_params_of(cfg) -> CostParams:
    return _build(CostParams, {**cfg["cost"], "em_eps": cfg["em"]["em_eps"]}, "cost")


def rig_spec_of(cfg) -> RigSpec:
    return _build(RigSpec, cfg["rig_spec"], "rig_spec")


def noise_of(cfg) -> NoiseSpec:
    return _build(NoiseSpec, cfg["robustness"]["noise"], "robustness.noise")


def sway_of(cfg) -> SwaySpec:
    return _build(SwaySpec, cfg["robustness"]["sway"], "robustness.sway")


def rig_of(cfg) -> CameraRig:
    """Explicit rig (inline poses or a rig JSON path) or one generated from ``rig_spec``."""
    lens, intr = lens_of(cfg), intrinsics_of(cfg)
    rig = cfg.get("rig")
    if rig is None:
        return generate_rig(rig_spec_of(cfg), lens, intr)
    if isinstance(rig, str):
        return load_rig(rig, lens, intr)
    if isinstance(rig, dict) and "path" in rig:
        return load_rig(rig["path"], lens, intr)
    return rig_from_json(rig, lens, intr)


def rig_to_json(rig: CameraRig) -> dict:
    return {"positions": rig.positions.tolist(), "view_dirs": rig.view_dirs.tolist(),
            "ups": rig.ups.tolist()}


def rig_from_json(data: dict, lens=None, intr=None) -> CameraRig:
    """Rig from ``{positions, view_dirs, ups}`` arrays or a ``cameras`` record list."""
    try:
        if "cameras" in data:
            cams = data["cameras"]
            data = {"positions": [c.get("position_mm", c.get("position")) for c in cams],
                    "view_dirs": [c["view_dir"] for c in cams], "ups": [c["up"] for c in cams]}
        return CameraRig(np.asarray(data["positions"], dtype=np.float64),
                         np.asarray(data["view_dirs"], dtype=np.float64),
                         np.asarray(data["ups"], dtype=np.float64),
                         lens or LensConfig(), intr or CameraIntrinsics())
    except KeyError as exc:
        raise ConfigError(f"rig: missing {exc}") from exc
    except (ShapeFocusError, ValueError, TypeError) as exc:
        raise ConfigError(f"rig: {exc}") from exc


def load_rig(path, lens=None, intr=None) -> CameraRig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read rig file {path}: {exc}") from exc
    return rig_from_json(data, lens, intr)
