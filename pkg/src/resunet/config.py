"""Pipeline configuration: TOML (or JSON) file plus command-line overrides.

Example ``cfg.toml``::

    seed = 7

    [network]
    depth = 3
    base_filters = 32

    [train]
    epochs = 10
    batch_size = 8
    learning_rate = 1e-4

    [data]
    patch_size = 64
    split_ratio = 0.8
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .network import NetworkConfig
from .training import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    patch_size: int = 128
    views: tuple[str, ...] = ("axial", "sagittal", "coronal")
    split_ratio: float = 0.8
    by_case: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    paths: dict = field(default_factory=dict)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(canonical.encode()).hexdigest()


def _build(cls, values: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"bad [{section}] section: {exc}") from exc


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.suffix == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        try:
            return json.loads(text)
        except json.JSONDecodeError:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc


def build_config(values: dict | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Merge a parsed config mapping with dotted-key overrides (``train.epochs``).

    The top-level ``seed`` feeds ``train.seed`` unless the train section sets
    its own.
    """
    values = json.loads(json.dumps(values or {}))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        target = values
        *parents, leaf = key.split(".")
        for part in parents:
            target = target.setdefault(part, {})
        target[leaf] = value
    unknown = set(values) - {"seed", "paths", "network", "train", "data"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    seed = int(values.get("seed", 0))
    train_values = dict(values.get("train", {}))
    train_values.setdefault("seed", seed)
    cfg = PipelineConfig(
        seed=seed,
        paths=dict(values.get("paths", {})),
        network=_build(NetworkConfig, values.get("network", {}), "network"),
        train=_build(TrainConfig, train_values, "train"),
        data=_build(DataConfig, values.get("data", {}), "data"),
    )
    cfg.network.validate()
    cfg.train.validate()
    return cfg


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    return build_config(read_config_file(path) if path else {}, overrides)

