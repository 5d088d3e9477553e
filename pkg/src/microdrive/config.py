"""Run configuration: every tunable in one INI file, overridable per key.

Each section mirrors one config dataclass. Values absent from the file keep
their dataclass defaults, so an empty file is a valid config. CLI flags and
``--set section.key=value`` pairs are applied on top through
`apply_overrides`, which means the precedence is always
defaults < file < command line.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field

import numpy as np

from microdrive.agents import CEMConfig
from microdrive.collect import CollectConfig
from microdrive.grids import ActionGrid, GridSpec, PlanConfig
from microdrive.policy import ControlConfig, DistillConfig
from microdrive.reward import RewardConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class GridConfig:
    """Anchor-free grid shape; anchored specs are minted per ego pose."""
    n_pos: int = 96
    d_pos: float = 1.0 / 3.0
    n_theta: int = 5
    d_theta: float = float(np.deg2rad(38.0))
    n_v: int = 4
    d_v: float = 2.0
    v_lo: float = 0.0

    def kwargs(self) -> dict:
        return dataclasses.asdict(self)

    def spec_at(self, x: float, y: float, theta: float) -> GridSpec:
        return GridSpec(x, y, theta, **self.kwargs())


@dataclass
class RunConfig:
    map_name: str = "town-a"
    grid: GridConfig = field(default_factory=GridConfig)
    actions: ActionGrid = field(default_factory=ActionGrid)
    plan: PlanConfig = field(default_factory=PlanConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    cem: CEMConfig = field(default_factory=CEMConfig)
    collect: CollectConfig = field(default_factory=CollectConfig)


_SECTIONS = {
    "grid": "grid",
    "actions": "actions",
    "plan": "plan",
    "reward": "reward",
    "distill": "distill",
    "control": "control",
    "cem": "cem",
    "collect": "collect",
}


def _coerce(text: str, target_type, key: str):
    if target_type is bool:
        low = text.strip().lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"{key}: {text!r} is not a boolean")
    if target_type is int:
        return int(text)
    if target_type is float:
        return float(text)
    if target_type is str:
        return text
    raise ValueError(f"{key}: unsupported option type {target_type}")


def _scalar_fields(cls):
    return {f.name: f for f in dataclasses.fields(cls)
            if f.type in ("int", "float", "bool", "str", int, float, bool, str)}


def _rebuild(current, updates: dict):
    fields = _scalar_fields(type(current))
    kwargs = {name: getattr(current, name) for name in fields}
    # keep non-scalar fields (e.g. optional sub-configs) as they are
    extra = {f.name: getattr(current, f.name)
             for f in dataclasses.fields(type(current)) if f.name not in fields}
    for key, text in updates.items():
        if key not in fields:
            raise KeyError(f"unknown option {key!r} for [{type(current).__name__}]")
        py_type = {"int": int, "float": float, "bool": bool, "str": str}.get(
            fields[key].type, fields[key].type)
        kwargs[key] = _coerce(text, py_type, key)
    return type(current)(**kwargs, **extra)


def load_config(path=None) -> RunConfig:
    """Read a RunConfig; a missing/None path yields pure defaults."""
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    with open(path) as f:
        parser.read_file(f)
    for section in parser.sections():
        if section == "run":
            if parser.has_option("run", "map"):
                cfg.map_name = parser.get("run", "map")
            unknown = set(parser.options("run")) - {"map"}
            if unknown:
                raise KeyError(f"unknown options in [run]: {sorted(unknown)}")
            continue
        if section not in _SECTIONS:
            raise KeyError(f"unknown config section [{section}]")
        attr = _SECTIONS[section]
        updates = dict(parser.items(section))
        setattr(cfg, attr, _rebuild(getattr(cfg, attr), updates))
    return cfg


def save_config(cfg: RunConfig, path):
    parser = configparser.ConfigParser()
    parser["run"] = {"map": cfg.map_name}
    for section, attr in _SECTIONS.items():
        sub = getattr(cfg, attr)
        parser[section] = {
            name: repr(getattr(sub, name)) if not isinstance(getattr(sub, name), str)
            else getattr(sub, name)
            for name in _scalar_fields(type(sub))
        }
    buf = io.StringIO()
    parser.write(buf)
    with open(path, "w") as f:
        f.write(buf.getvalue())


def apply_overrides(cfg: RunConfig, pairs) -> RunConfig:
    """Apply ``section.key=value`` strings on top of a config."""
    grouped = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"override {pair!r} is not key=value")
        key, value = pair.split("=", 1)
        if key == "run.map":
            cfg.map_name = value
            continue
        if "." not in key:
            raise ValueError(f"override key {key!r} needs a section prefix")
        section, opt = key.split(".", 1)
        if section not in _SECTIONS:
            raise KeyError(f"unknown config section {section!r}")
        grouped.setdefault(section, {})[opt] = value
    for section, updates in grouped.items():
        attr = _SECTIONS[section]
        setattr(cfg, attr, _rebuild(getattr(cfg, attr), updates))
    return cfg
