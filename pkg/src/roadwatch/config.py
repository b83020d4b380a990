"""YAML experiment configuration.

Every section is optional; omitted keys take the library defaults::

    experiment: {runs: 5, seed: 0, out: results}
    scenarios:  {count: 50, per_class: 2, duration_s: 120, seed: 0,
                 sim: {slowdown_prob: 0.1},
                 profiles: {aggressive: {weave_rate: 0.05}}}
    camera:     {height_m: 10, depression_deg: 30}
    noise:      {pos_noise_sigma_px: 0.23, id_switch_prob: 0.0057}
    detector:   {drift_offset: 0.3}
    road_types: {"27.5": {straddle_offset: 0.95}}
    window:     {window_len: 900, step: 450}
    behaviors:
      aggressive: {hard: [hardBraking], soft: {overSpeed: 2}, threshold: 1}
"""

from __future__ import annotations

from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .ec import Window
from .harness import ExperimentConfig
from .observe import CameraModel, NoiseModel
from .rules import DetectorParams
from .sim import ConfigError, DriverProfile, Label, SimConfig
from .wpm import DEFAULT_SPECS, BehaviorSpec

SECTIONS = {"experiment", "scenarios", "camera", "noise", "detector", "road_types", "window", "behaviors"}


def _check_keys(section: str, given: Mapping, allowed) -> None:
    unknown = set(given) - set(allowed)
    if unknown:
        raise ConfigError(f"[{section}] unknown key(s): {sorted(unknown)}")


def _field_names(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def _scenarios(d: Mapping[str, Any]) -> tuple[SimConfig, ...]:
    _check_keys("scenarios", d, {"count", "per_class", "duration_s", "seed", "sim", "profiles", "mix"})
    sim_kw = dict(d.get("sim", {}))
    _check_keys("scenarios.sim", sim_kw, _field_names(SimConfig) - {"profiles", "seed", "duration_s"})
    overrides = d.get("profiles", {})
    _check_keys("scenarios.profiles", overrides, {lab.value for lab in Label})
    mix = d.get("mix")
    if mix is None:
        per = int(d.get("per_class", 2))
        mix = {"safe": per, "distracted": per, "aggressive": per}
    labels = [Label(lab) for lab, k in mix.items() for _ in range(int(k))]
    profiles = []
    for lab in labels:
        base = DriverProfile.default_for(lab)
        kw = dict(overrides.get(lab.value, {}))
        _check_keys(f"scenarios.profiles.{lab.value}", kw, _field_names(DriverProfile) - {"label"})
        profiles.append(replace(base, **kw))
    seed = int(d.get("seed", 0))
    count = int(d.get("count", 50))
    out = tuple(
        SimConfig(profiles=tuple(profiles), seed=seed + i, duration_s=float(d.get("duration_s", 120)), **sim_kw)
        for i in range(count)
    )
    for s in out:
        s.validate()
    return out


def _behaviors(d: Mapping[str, Any]) -> tuple[BehaviorSpec, ...]:
    if not d:
        return DEFAULT_SPECS
    defaults = {s.name: s for s in DEFAULT_SPECS}
    specs = []
    for name, body in d.items():
        base = defaults.get(name)
        merged = base.to_dict() if base else {}
        merged.update(body or {})
        if "threshold" not in merged:
            raise ConfigError(f"[behaviors.{name}] needs a threshold")
        specs.append(BehaviorSpec.from_dict(name, merged))
    # keep the precedence order aggressive > distracted for known names
    order = {"aggressive": 0, "distracted": 1}
    return tuple(sorted(specs, key=lambda s: order.get(s.name, 2)))


def config_from_dict(d: Mapping[str, Any] | None) -> ExperimentConfig:
    d = dict(d or {})
    _check_keys("top level", d, SECTIONS)
    exp = dict(d.get("experiment", {}))
    _check_keys("experiment", exp, {"runs", "seed", "out"})
    scen = _scenarios(d.get("scenarios", {}))
    cam_kw = dict(d.get("camera", {}))
    try:
        camera = CameraModel.oblique(**cam_kw)
    except TypeError as exc:
        raise ConfigError(f"[camera] {exc}") from None
    noise_kw = dict(d.get("noise", {}))
    _check_keys("noise", noise_kw, _field_names(NoiseModel))
    noise = replace(NoiseModel.calibrated(), **noise_kw)
    det_kw = dict(d.get("detector", {}))
    _check_keys("detector", det_kw, _field_names(DetectorParams))
    limit = scen[0].speed_limit_mps
    params = DetectorParams.for_speed_limit(det_kw.pop("speed_limit", limit), **det_kw)
    road = {}
    for key, over in dict(d.get("road_types", {})).items():
        _check_keys(f"road_types.{key}", over, _field_names(DetectorParams))
        kw = {**det_kw, **over}
        road[float(key)] = DetectorParams.for_speed_limit(float(key), **kw)
    win = dict(d.get("window", {}))
    _check_keys("window", win, {"window_len", "step"})
    try:
        return ExperimentConfig(
            scenarios=scen,
            camera=camera,
            noise=noise,
            params=params,
            road_params=road,
            specs=_behaviors(d.get("behaviors", {})),
            runs=int(exp.get("runs", 5)),
            seed=int(exp.get("seed", 0)),
            window=Window(**win),
            out_dir=exp.get("out"),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return config_from_dict({})
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is not None and not isinstance(data, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)
