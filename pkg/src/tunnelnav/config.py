"""Simulation configuration and its TOML loader."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .control import NmpcConfig
from .dynamics import DynamicsParams, VehicleState
from .errors import ConfigError, InvalidSpecError
from .estimation import FilterParams
from .navigation import NavParams
from .sensors import NoiseParams
from .world import TunnelSpec


@dataclass(frozen=True)
class Rates:
    """Event rates in Hz; all integers so the schedule is exact."""

    physics: int = 500
    lidar: int = 15
    altimeter: int = 300
    flow: int = 250
    imu: int = 250
    nmpc: int = 50
    mapping: int = 1

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
                raise InvalidSpecError(f"{f.name} must be a positive integer (Hz), got {value!r}")
        fastest = max(self.lidar, self.altimeter, self.flow, self.imu, self.nmpc, self.mapping)
        if self.physics < fastest:
            raise InvalidSpecError(f"physics rate {self.physics} must be >= fastest event rate {fastest}")


@dataclass(frozen=True)
class MappingConfig:
    resolution: float = 0.05
    margin: float = 2.0
    l_occ: float = 0.85
    l_free: float = -0.4
    clamp: float = 4.0
    pose_source: str = "truth"

    def __post_init__(self) -> None:
        if not self.resolution > 0.0:
            raise InvalidSpecError(f"resolution must be > 0, got {self.resolution}")
        if not self.margin >= 0.0:
            raise InvalidSpecError(f"margin must be >= 0, got {self.margin}")
        if not self.l_occ > 0.0:
            raise InvalidSpecError(f"l_occ must be > 0, got {self.l_occ}")
        if not self.l_free < 0.0:
            raise InvalidSpecError(f"l_free must be < 0, got {self.l_free}")
        if not self.clamp > 0.0:
            raise InvalidSpecError(f"clamp must be > 0, got {self.clamp}")
        if self.pose_source not in ("truth", "estimate"):
            raise InvalidSpecError(f"pose_source must be 'truth' or 'estimate', got {self.pose_source!r}")


def _default_initial() -> VehicleState:
    return VehicleState(x=1.0, y=0.0, z=0.5)


@dataclass(frozen=True)
class SimConfig:
    tunnel: TunnelSpec = field(default_factory=TunnelSpec)
    noise: NoiseParams = field(default_factory=NoiseParams)
    filters: FilterParams = field(default_factory=FilterParams)
    nav: NavParams = field(default_factory=NavParams)
    nmpc: NmpcConfig = field(default_factory=NmpcConfig)
    dynamics: DynamicsParams = field(default_factory=DynamicsParams)
    mapping: MappingConfig = field(default_factory=MappingConfig)
    rates: Rates = field(default_factory=Rates)
    initial: VehicleState = field(default_factory=_default_initial)
    duration: float = 60.0
    seed: int = 7
    radius: float = 0.35
    stop_on_collision: bool = True

    def __post_init__(self) -> None:
        if not (math.isfinite(self.duration) and self.duration > 0.0):
            raise InvalidSpecError(f"duration must be > 0, got {self.duration}")
        if not self.radius > 0.0:
            raise InvalidSpecError(f"radius must be > 0, got {self.radius}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise InvalidSpecError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.nmpc.thrust_max > self.dynamics.thrust_max + 1e-12:
            raise InvalidSpecError("nmpc.thrust_max must not exceed dynamics.thrust_max")
        if self.nmpc.tilt_max > self.dynamics.tilt_max + 1e-12:
            raise InvalidSpecError("nmpc.tilt_max must not exceed dynamics.tilt_max")
        try:
            self.initial.validate()
        except Exception as exc:
            raise InvalidSpecError(f"initial state invalid: {exc}") from exc

    def replace(self, **changes: Any) -> "SimConfig":
        return dataclasses.replace(self, **changes)


_SECTIONS = {
    "tunnel": TunnelSpec,
    "noise": NoiseParams,
    "filters": FilterParams,
    "nav": NavParams,
    "nmpc": NmpcConfig,
    "dynamics": DynamicsParams,
    "mapping": MappingConfig,
    "rates": Rates,
    "initial": VehicleState,
}
_TOP_LEVEL = {"duration": float, "seed": int, "radius": float, "stop_on_collision": bool}


def _coerce(key: str, value: Any, kind: type) -> Any:
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(value, bool):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if kind is int:
        if not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    return value


def _section(name: str, cls: type, table: Any, default: Any) -> Any:
    if not isinstance(table, dict):
        raise ConfigError(f"{name}: expected a table")
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    kwargs = {}
    for key, value in table.items():
        if key not in fields:
            raise ConfigError(f"unknown key '{name}.{key}'")
        if cls is TunnelSpec and key == "segments":
            if not isinstance(value, list) or not all(
                isinstance(seg, list) and len(seg) == 2 and all(
                    isinstance(v, (int, float)) and not isinstance(v, bool) for v in seg)
                for seg in value
            ):
                raise ConfigError(f"{name}.segments: expected a list of [length, heading_change] pairs")
            kwargs[key] = tuple((float(a), float(b)) for a, b in value)
            continue
        kind = type(getattr(default, key))
        kwargs[key] = _coerce(f"{name}.{key}", value, kind)
    try:
        return dataclasses.replace(default, **kwargs)
    except (InvalidSpecError, ValueError, TypeError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def config_from_dict(data: dict) -> SimConfig:
    base = SimConfig()
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _section(key, _SECTIONS[key], value, getattr(base, key))
        elif key in _TOP_LEVEL:
            kwargs[key] = _coerce(key, value, _TOP_LEVEL[key])
        else:
            raise ConfigError(f"unknown key '{key}'")
    try:
        return dataclasses.replace(base, **kwargs)
    except (InvalidSpecError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> SimConfig:
    """Parse a TOML config; omitted fields keep their defaults."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data)


def config_to_toml(config: SimConfig) -> str:
    """Serialize a config back to TOML text that :func:`load_config` accepts."""
    lines = []
    for key in _TOP_LEVEL:
        value = getattr(config, key)
        lines.append(f"{key} = {_toml_value(value)}")
    for name in _SECTIONS:
        section = getattr(config, name)
        lines.append("")
        lines.append(f"[{name}]")
        for f in dataclasses.fields(section):
            if not f.init:
                continue
            value = getattr(section, f.name)
            if name == "tunnel" and f.name == "segments":
                inner = ", ".join(f"[{_toml_value(a)}, {_toml_value(b)}]" for a, b in value)
                lines.append(f"segments = [{inner}]")
            else:
                lines.append(f"{f.name} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    raise TypeError(f"cannot serialize {value!r}")
