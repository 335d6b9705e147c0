"""INI run configuration with a strict schema.

Every key belongs to a dataclass section; unknown sections or keys, bad values
and missing required paths raise :class:`ConfigError`.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import get_type_hints

from .model import ModelConfig
from .queries import BatteryConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PathsConfig:
    data: str | None = None
    vocab: str | None = None
    output_dir: str | None = None


@dataclass(frozen=True)
class DataConfig:
    train_frac: float = 0.75
    val_frac: float = 0.10
    test_frac: float = 0.15
    min_events: int | None = None
    max_events: int | None = None


@dataclass(frozen=True)
class SimulateConfig:
    source: str = "poisson"        # poisson | planted | model
    n_sequences: int = 100
    horizon: float = 10.0
    rate: float = 1.0
    rho: str = "0.3,0.2"
    K: int = 8


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    query: BatteryConfig = field(default_factory=BatteryConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    data: DataConfig = field(default_factory=DataConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def require_path(self, name: str) -> Path:
        v = getattr(self.paths, name)
        if not v:
            raise ConfigError(f"[paths] {name} is required for this command")
        return Path(v)


SECTIONS = {"model": ModelConfig, "training": TrainConfig, "query": BatteryConfig, "paths": PathsConfig,
            "data": DataConfig, "simulate": SimulateConfig}


def _convert(raw: str, typ, where: str):
    text = raw.strip()
    optional = "None" in str(typ)
    if optional and text.lower() in ("", "none"):
        return None
    base = str(typ)
    try:
        if "int" in base and "float" not in base:
            return int(text)
        if "float" in base:
            return float(text)
        if "bool" in base:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {base}") from None
    return text


def _build(cls, items: dict, section: str):
    hints = get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = set(items) - names
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(sorted(unknown))}")
    kw = {k: _convert(v, hints[k], f"[{section}] {k}") for k, v in items.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__", inline_comment_prefixes=(";",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    unknown = set(cp.sections()) - set(SECTIONS) - {"run"}
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    parts = {}
    for name, cls in SECTIONS.items():
        items = dict(cp.items(name)) if cp.has_section(name) else {}
        parts[name] = _build(cls, items, name)
    seed = 0
    if cp.has_section("run"):
        run = dict(cp.items("run"))
        if set(run) - {"seed"}:
            raise ConfigError(f"[run] unknown keys: {', '.join(sorted(set(run) - {'seed'}))}")
        if "seed" in run:
            seed = _convert(run["seed"], int, "[run] seed")
    if base_dir is not None:
        resolved = {k: (str((base_dir / v).resolve()) if v else v) for k, v in dataclasses.asdict(parts["paths"]).items()}
        parts["paths"] = PathsConfig(**resolved)
    d = parts["data"]
    if abs(d.train_frac + d.val_frac + d.test_frac - 1.0) > 1e-9:
        raise ConfigError("[data] split fractions must sum to 1")
    if parts["simulate"].source not in ("poisson", "planted", "model"):
        raise ConfigError("[simulate] source must be poisson, planted or model")
    return RunConfig(seed=seed, **parts)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse_config(text, p.parent)
