"""Structured run configuration shared by every CLI command.

A config file (TOML or JSON) has optional sections ``sde``, ``net``,
``train``, ``sampler``, ``stft`` and ``transform`` whose keys are the field
names of the matching dataclasses. Unknown sections or keys are rejected.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .dsp import StftConfig, TransformConfig
from .sampler import SamplerConfig
from .scorenet import NetConfig
from .sde import SdeParams
from .trainer import TrainConfig

SECTIONS = {
    "sde": SdeParams,
    "net": NetConfig,
    "train": TrainConfig,
    "sampler": SamplerConfig,
    "stft": StftConfig,
    "transform": TransformConfig,
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    sde: SdeParams = field(default_factory=SdeParams)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    stft: StftConfig = field(default_factory=StftConfig)
    transform: TransformConfig = field(default_factory=TransformConfig)

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            section = getattr(self, name)
            out[name] = section.to_dict() if hasattr(section, "to_dict") else dataclasses.asdict(section)
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, path):
        Path(path).write_text(self.dumps() + "\n")


def _build(name, cls, values):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{name}] section: {exc}") from exc


def from_dict(data: dict, overrides: dict = None) -> RunConfig:
    """Build a :class:`RunConfig`; ``overrides`` maps ``section -> {key: value}``."""
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    merged = {name: dict(data.get(name, {})) for name in SECTIONS}
    for section, values in (overrides or {}).items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section {section!r}")
        merged[section].update({k: v for k, v in values.items() if v is not None})
    return RunConfig(**{name: _build(name, cls, merged[name]) for name, cls in SECTIONS.items()})


def load(path=None, overrides: dict = None) -> RunConfig:
    """Read a ``.toml`` or ``.json`` file (or nothing) and apply overrides."""
    data = {}
    if path is not None:
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".toml":
            data = tomllib.loads(text)
        elif path.suffix == ".json":
            data = json.loads(text)
        else:
            raise ConfigError(f"{path}: config must be .toml or .json")
    return from_dict(data, overrides)
