"""JSON ingestion and export for configurations and biped specs.

Files carry explicit unit suffixes (``_m``/``_mm`` for lengths, ``_deg``/
``_rad`` for angles) and are converted to SI at load time. Exactly one unit
variant may be present per quantity; unknown keys are rejected so typos fail
loudly rather than silently falling back to defaults.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict

from .biped import BipedSpec
from .model import DEFAULT_GRAVITY, Configuration


class ConfigError(ValueError):
    """Invalid configuration file; message names the offending key."""


_LENGTH = {"_m": 1.0, "_mm": 1e-3}
_ANGLE = {"_rad": 1.0, "_deg": math.pi / 180.0}


def _take(data: dict, base: str, units: dict, *, required=False, default=None):
    hits = [(base + suf, factor) for suf, factor in units.items()
            if base + suf in data]
    if len(hits) > 1:
        raise ConfigError(f"conflicting unit variants for '{base}': "
                          + ", ".join(k for k, _ in hits))
    if not hits:
        if required:
            raise ConfigError(f"missing key '{base}' (accepted suffixes: "
                              + ", ".join(units) + ")")
        return default
    key, factor = hits[0]
    value = data.pop(key)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"key '{key}' must be a number, got {value!r}")
    return float(value) * factor


def _take_plain(data: dict, key: str, *, required=False, default=None):
    if key not in data:
        if required:
            raise ConfigError(f"missing key '{key}'")
        return default
    value = data.pop(key)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"key '{key}' must be a number, got {value!r}")
    return float(value)


def configuration_from_dict(data: dict) -> Configuration:
    data = dict(data)
    data.pop("type", None)
    m = _take_plain(data, "mass_kg", required=True)
    rho = _take(data, "gyration_radius", _LENGTH, required=True)
    h = _take(data, "com_height", _LENGTH, required=True)
    l1 = _take(data, "contact1_offset", _LENGTH, required=True)
    l2 = _take(data, "contact2_offset", _LENGTH, required=True)
    mu1 = _take_plain(data, "mu1", required=True)
    mu2 = _take_plain(data, "mu2", required=True)
    phi1 = _take(data, "contact1_normal_angle", _ANGLE, default=0.0)
    phi2 = _take(data, "contact2_normal_angle", _ANGLE, default=0.0)
    slope = _take(data, "slope_angle", _ANGLE)
    f_ex = _take_plain(data, "external_force_n")
    if (slope is None) == (f_ex is None):
        raise ConfigError("specify exactly one load form: 'slope_angle_*' "
                          "(gravity on an incline) or 'external_force_n' "
                          "with angle and torque")
    if slope is not None:
        g = _take_plain(data, "gravity_m_s2", default=DEFAULT_GRAVITY)
        alpha, f_ex, tau_ex = slope, m * g, 0.0
    else:
        alpha = _take(data, "external_force_angle", _ANGLE, required=True)
        tau_ex = _take_plain(data, "external_torque_nm", default=0.0)
    if data:
        raise ConfigError(f"unknown keys: {', '.join(sorted(data))}")
    try:
        return Configuration(m=m, rho=rho, h=h, l1=l1, l2=l2, mu1=mu1, mu2=mu2,
                             f_ex=f_ex, alpha=alpha, tau_ex=tau_ex,
                             phi1=phi1, phi2=phi2)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def configuration_to_dict(cfg: Configuration) -> dict:
    out = {
        "mass_kg": cfg.m,
        "gyration_radius_m": cfg.rho,
        "com_height_m": cfg.h,
        "contact1_offset_m": cfg.l1,
        "contact2_offset_m": cfg.l2,
        "mu1": cfg.mu1,
        "mu2": cfg.mu2,
        "contact1_normal_angle_rad": cfg.phi1,
        "contact2_normal_angle_rad": cfg.phi2,
        "external_force_n": cfg.f_ex,
        "external_force_angle_rad": cfg.alpha,
        "external_torque_nm": cfg.tau_ex,
    }
    return out


def biped_from_dict(data: dict) -> BipedSpec:
    data = dict(data)
    data.pop("type", None)
    kwargs = dict(
        beam_mass=_take_plain(data, "beam_mass_kg", default=0.124),
        beam_length=_take(data, "beam_length", _LENGTH, default=0.40),
        beam_center=_take(data, "beam_center", _LENGTH, default=0.030),
        leg_mass=_take_plain(data, "leg_mass_kg", default=0.040),
        leg_length=_take(data, "leg_length", _LENGTH, default=0.110),
        leg1_pos=_take(data, "leg1_pos", _LENGTH, default=0.0),
        leg2_pos=_take(data, "leg2_pos", _LENGTH, default=0.060),
        cyl_mass=_take_plain(data, "cyl_mass_kg", default=0.195),
        cyl1_pos=_take(data, "cyl1_pos", _LENGTH, required=True),
        cyl2_pos=_take(data, "cyl2_pos", _LENGTH, required=True),
        cyl_height=_take(data, "cyl_height", _LENGTH, default=0.048),
        cyl_gyradius=_take(data, "cyl_gyradius", _LENGTH, default=0.014),
        mu1=_take_plain(data, "mu1", default=0.315),
        mu2=_take_plain(data, "mu2", default=1.0),
        alpha=_take(data, "slope_angle", _ANGLE, default=math.radians(25.0)),
        g=_take_plain(data, "gravity_m_s2", default=DEFAULT_GRAVITY),
    )
    if data:
        raise ConfigError(f"unknown keys: {', '.join(sorted(data))}")
    try:
        return BipedSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def biped_to_dict(spec: BipedSpec) -> dict:
    out = {"type": "biped"}
    for key, value in asdict(spec).items():
        if key in ("mu1", "mu2"):
            out[key] = value
        elif key == "alpha":
            out["slope_angle_rad"] = value
        elif key == "g":
            out["gravity_m_s2"] = value
        elif "mass" in key:
            out[key + "_kg"] = value
        else:
            out[key + "_m"] = value
    return out


def load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def load_configuration(path) -> Configuration:
    data = load_json(path)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    if data.get("type") == "biped":
        from .biped import biped_to_configuration
        return biped_to_configuration(biped_from_dict(data))
    return configuration_from_dict(data)


def load_biped(path) -> BipedSpec:
    data = load_json(path)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return biped_from_dict(data)


def save_json(obj: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
