"""Run configuration: strict TOML parsing with dataclass-backed sections."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .augment import AugmentConfig
from .encoders import EncoderConfig
from .fusion import MLFConfig
from .losses import ContrastiveConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    path: Optional[str] = None
    split_seed: int = 0
    ratios: list = field(default_factory=lambda: [8, 1, 1])
    explicit_counts: Optional[list] = None
    num_classes: Optional[int] = None


@dataclass
class RunConfig:
    output_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


_NESTED = {
    (RunConfig, "data"): DataConfig,
    (RunConfig, "train"): TrainConfig,
    (TrainConfig, "encoder"): EncoderConfig,
    (TrainConfig, "mlf"): MLFConfig,
    (TrainConfig, "contrastive"): ContrastiveConfig,
    (TrainConfig, "augment"): AugmentConfig,
}


def from_dict(cls, data: dict, prefix: str = ""):
    """Build dataclass ``cls`` from ``data``, rejecting unknown keys by dotted name."""
    if not isinstance(data, dict):
        raise ConfigError(f"config section {prefix.rstrip('.') or '<root>'} must be a table")
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown config key '{prefix}{key}'")
        sub = _NESTED.get((cls, key))
        if sub is not None:
            kwargs[key] = from_dict(sub, value, f"{prefix}{key}.")
        elif key in ("betas", "op_set"):
            kwargs[key] = tuple(value) if key == "betas" else list(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid config section {prefix.rstrip('.') or '<root>'}: {err}") from err


def to_dict(obj) -> dict:
    """Dataclass -> plain dict with ``None`` values dropped (TOML has no null)."""

    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items() if x is not None}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        return v

    return clean(dataclasses.asdict(obj))


def load_run_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Parse a TOML file (optional) then apply dotted-key ``overrides``."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(2, "config file not found", str(path))
        with path.open("rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as err:
                raise ConfigError(f"{path}: {err}") from err
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = data
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    cfg = from_dict(RunConfig, data)
    try:
        cfg.train.validate()
    except ValueError as err:
        raise ConfigError(str(err)) from err
    return cfg


def dump_toml(cfg) -> str:
    return tomli_w.dumps(to_dict(cfg))


def write_resolved(cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir) / "config.resolved.toml"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dump_toml(cfg), encoding="utf-8")
    return out
