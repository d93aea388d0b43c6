"""Run configuration: sectioned key = value files over published defaults.

Every controller tuning constant is exposed with its published value as
the default, so a run without a config file reproduces the reference
plant.  Unknown keys are rejected to catch typos.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields

from .mpc import MpcConfig


class ConfigError(Exception):
    """Bad configuration (CLI exit code 2)."""


@dataclass
class WeatherConfig:
    source: str = "intermittent"        # csv | clear | intermittent
    path: str = ""
    duration_s: int = 43200
    g_peak: float = 1000.0


@dataclass
class RegulationConfig:
    source: str = "synthetic"           # none | csv | synthetic
    path: str = ""
    capacity_w: float = 1e6
    activation_s: float = 1200.0
    stop_s: float = float("inf")        # service window end (inf = run end)


@dataclass
class ScenarioConfig:
    request_scale: float = 1.0
    soc_target: float = 0.90
    reserve_base_w: float = 5e5
    reserve_relief_cap_w: float = 5e5
    baseline_block_s: float = 1800.0


@dataclass
class NoiseConfig:
    sigma_voltage_v: float = 1.6
    sigma_current_a: float = 3.25
    soc_estimate_offset: float = 0.05


@dataclass
class ForecastConfig:
    sigma_60s: float = 0.082
    resample_period_s: float = 300.0
    block_error_band: float = 0.10


@dataclass
class ThermalConfig:
    enabled: bool = False
    tau_governor_s: float = 0.2
    tau_turbine_s: float = 0.3
    tau_reheater_s: float = 7.0
    f_hp: float = 0.3
    ramp_per_min_w: float = 0.8e6
    offset_w: float = 7.5e5
    service_capacity_w: float = 1.5e6


@dataclass
class RunConfig:
    seed: int = 1
    out_dir: str = "runs"
    case_label: str = "case1"
    dt_sim: float = 1.0
    soc_initial: float = 0.90
    weather: WeatherConfig = field(default_factory=WeatherConfig)
    regulation: RegulationConfig = field(default_factory=RegulationConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    forecast: ForecastConfig = field(default_factory=ForecastConfig)
    thermal: ThermalConfig = field(default_factory=ThermalConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)

    def validate(self):
        if self.dt_sim <= 0:
            raise ConfigError("dt_sim must be positive")
        steps = self.mpc.ts / self.dt_sim
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError("dt_sim must divide the controller period")
        if self.weather.source == "csv" and not os.path.exists(self.weather.path):
            raise ConfigError(f"weather csv not found: {self.weather.path}")
        if self.regulation.source == "csv" and not os.path.exists(self.regulation.path):
            raise ConfigError(f"regulation csv not found: {self.regulation.path}")
        if self.weather.source not in ("csv", "clear", "intermittent"):
            raise ConfigError(f"unknown weather source '{self.weather.source}'")
        if self.regulation.source not in ("none", "csv", "synthetic"):
            raise ConfigError(f"unknown regulation source '{self.regulation.source}'")
        return self


def _tuple_field(parser, section, key, current, n):
    raw = parser.get(section, key)
    parts = [float(x) for x in raw.replace(",", " ").split()]
    if len(parts) != n:
        raise ConfigError(f"[{section}] {key} needs {n} values")
    return tuple(parts)


def _apply_section(parser, section, obj):
    if not parser.has_section(section):
        return obj
    updates = {}
    names = {f.name: f for f in fields(obj)}
    for key in parser[section]:
        if key not in names:
            raise ConfigError(f"unknown key '{key}' in section [{section}]")
        current = getattr(obj, key)
        try:
            if isinstance(current, bool):
                updates[key] = parser.getboolean(section, key)
            elif isinstance(current, int):
                updates[key] = parser.getint(section, key)
            elif isinstance(current, float):
                updates[key] = parser.getfloat(section, key)
            elif isinstance(current, tuple):
                updates[key] = _tuple_field(parser, section, key, current, len(current))
            else:
                updates[key] = parser.get(section, key)
        except ValueError as exc:
            raise ConfigError(f"bad value for [{section}] {key}: {exc}")
    from dataclasses import replace
    return replace(obj, **updates) if updates else obj


def load_config(path=None) -> RunConfig:
    """Config file over defaults; None loads pure defaults."""
    cfg = RunConfig()
    if path is None:
        return cfg.validate()
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")
    known = {"run", "weather", "regulation", "scenario", "noise", "forecast",
             "thermal", "mpc"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    if parser.has_section("run"):
        names = {f.name for f in fields(RunConfig)}
        for key in parser["run"]:
            if key not in names or key in ("weather", "regulation", "scenario",
                                           "noise", "forecast", "thermal", "mpc"):
                raise ConfigError(f"unknown key '{key}' in section [run]")
            current = getattr(cfg, key)
            if isinstance(current, bool):
                setattr(cfg, key, parser.getboolean("run", key))
            elif isinstance(current, int):
                setattr(cfg, key, parser.getint("run", key))
            elif isinstance(current, float):
                setattr(cfg, key, parser.getfloat("run", key))
            else:
                setattr(cfg, key, parser.get("run", key))
    cfg.weather = _apply_section(parser, "weather", cfg.weather)
    cfg.regulation = _apply_section(parser, "regulation", cfg.regulation)
    cfg.scenario = _apply_section(parser, "scenario", cfg.scenario)
    cfg.noise = _apply_section(parser, "noise", cfg.noise)
    cfg.forecast = _apply_section(parser, "forecast", cfg.forecast)
    cfg.thermal = _apply_section(parser, "thermal", cfg.thermal)
    cfg.mpc = _apply_section(parser, "mpc", cfg.mpc)
    return cfg.validate()
