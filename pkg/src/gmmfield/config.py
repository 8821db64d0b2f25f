"""Layered INI configuration shared by every CLI verb.

Sections and keys::

    [map]            block_size overlap_margin activation_distance edt_voxel_size halo
    [fit]            mae_tolerance max_kernels kernel_increment initial_kernels
                     initial_kernels_empty max_lm_iterations lm_initial_damping
                     length_scale_min length_scale_max negative_seed_weight
                     growth_length_scale prune_weight
    [registration]   coarse_cauchy_scale fine_cauchy_scale max_iterations
                     rel_cost_tol step_tol min_valid_fraction initial_damping
    [eval]           probe_step outlier_trim
    [localize]       setup sigma_t sigma_yaw scan_voxel
    [run]            seed threads

Unknown sections or keys are rejected so typos surface early. Command-line
flags are applied on top of the file and always win.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .fitter import ConfigError, FitConfig
from .registration import RegistrationConfig
from .sparse_map import MapConfig


@dataclass
class EvalConfig:
    probe_step: float = 0.3
    outlier_trim: float = 1e-4


@dataclass
class LocalizeConfig:
    setup: str = "inertial"
    sigma_t: float = 0.0
    sigma_yaw: float = 0.0
    scan_voxel: float = 0.5


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1


@dataclass
class Settings:
    map: MapConfig = field(default_factory=MapConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    localize: LocalizeConfig = field(default_factory=LocalizeConfig)
    run: RunConfig = field(default_factory=RunConfig)

    @property
    def fit(self) -> FitConfig:
        return self.map.fit

    def validate(self) -> None:
        self.map.validate()
        self.registration.validate()
        if self.eval.probe_step <= 0:
            raise ConfigError("eval.probe_step must be > 0")
        if not 0 <= self.eval.outlier_trim < 1:
            raise ConfigError("eval.outlier_trim must be in [0, 1)")
        if self.localize.scan_voxel < 0:
            raise ConfigError("localize.scan_voxel must be >= 0")
        if self.run.threads < 1:
            raise ConfigError("run.threads must be >= 1")

    def snapshot(self) -> dict:
        out = {}
        for name in ("map", "registration", "eval", "localize", "run"):
            d = dataclasses.asdict(getattr(self, name))
            d.pop("fit", None)
            out[name] = d
        out["fit"] = dataclasses.asdict(self.map.fit)
        return out


def _targets(s: Settings) -> dict:
    return {
        "map": s.map,
        "fit": s.map.fit,
        "registration": s.registration,
        "eval": s.eval,
        "localize": s.localize,
        "run": s.run,
    }


def _coerce(section: str, key: str, current, raw: str):
    try:
        if isinstance(current, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float) or current is None:
            return None if raw.strip().lower() in ("", "none", "auto") else float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def apply(settings: Settings, section: str, key: str, value) -> None:
    """Set one ``section.key``; strings are parsed against the current type."""
    key = key.replace("-", "_")
    if section == "fit" and key in ("length_scale_min", "length_scale_max"):
        lo, hi = settings.map.fit.parameter_bounds
        v = float(value)
        settings.map.fit.parameter_bounds = (v, hi) if key.endswith("min") else (lo, v)
        return
    target = _targets(settings).get(section)
    if target is None:
        raise ConfigError(f"unknown config section [{section}]")
    if key == "fit" or not hasattr(target, key):
        raise ConfigError(f"unknown key {key!r} in [{section}]")
    cur = getattr(target, key)
    setattr(target, key, _coerce(section, key, cur, value) if isinstance(value, str) else value)


def load_settings(path=None, overrides: dict | None = None) -> Settings:
    """Read ``path`` (optional) and then apply ``{"section.key": value}`` overrides."""
    s = Settings()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config not found: {p}")
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            cp.read_string(p.read_text(encoding="utf-8"), source=str(p))
        except configparser.Error as exc:
            raise ConfigError(f"{p}: {exc}") from None
        for section in cp.sections():
            for key, raw in cp.items(section):
                apply(s, section, key, raw)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, key = dotted.split(".", 1)
        apply(s, section, key, value)
    s.validate()
    return s
