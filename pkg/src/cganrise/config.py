"""Run configuration: one JSON file holding every module's settings."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .bench import BenchConfig
from .cgan import CganConfig
from .ekf_indirect import AdaptorConfig, EkfConfig
from .rise import RiseGains
from .rl_direct import DirectConfig, RewardConfig


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    n_samples: int = 2000
    uncertainty: float = 0.5
    n_x: int = 3
    n_u: int = 8


@dataclass
class D3Config:
    n_episodes: int = 200
    duration: float = 6.0
    ekf_stride: int = 2
    epochs: int = 200


@dataclass
class MetricWeights:
    Q: tuple = (2.0, 2.0)
    R1: tuple = (0.01, 0.01)
    R2: tuple = (0.002, 0.002)


@dataclass
class GainsInput:
    """Bounding constants and design values for the stability calculators."""
    c_d1: float = 0.0
    c_d2: float = 0.0
    delta3_dot: float = 0.0
    delta3_ddot: float = 0.0
    c_M1: float = 0.0
    c_M1_dot: float = 0.0
    c_M2: float = 0.0
    epsilon: float = 0.5
    alpha_bar: float = 1.0
    g_upper: float = 1.0
    g_lower: float = 1.0
    rho_c0: float = 0.0
    rho_c1: float = 1.0
    xi0_norm: float = 1.0
    beta_d: float = 0.0
    delta4: float = 0.0
    delta4_dot: float = 0.0
    lambda_min_pi: float = 1.0
    a_dot_bar: float = 0.01


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "out"
    dataset_path: str = "data/d2.jsonl"
    d3_path: str = "data/d3.jsonl"
    cgan_path: str = "models/cgan.json"
    adaptor_path: str = "models/adaptor.json"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    cgan: CganConfig = field(default_factory=CganConfig)
    d3: D3Config = field(default_factory=D3Config)
    adaptor: AdaptorConfig = field(default_factory=AdaptorConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    plant_spread: float = 0.0
    metrics: MetricWeights = field(default_factory=MetricWeights)
    stability: GainsInput = field(default_factory=GainsInput)
    base_dir: str = field(default=".", repr=False)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        factory = names[key].default_factory
        default = factory() if factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, f"{where}.{key}")
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict, base_dir: str = ".") -> RunConfig:
    cfg = _build(RunConfig, data, "config")
    cfg.base_dir = str(base_dir)
    if not isinstance(cfg.seed, int):
        raise ConfigError("config.seed must be an integer")
    return cfg


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {p}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(data, p.parent)


__all__ = ["ConfigError", "RunConfig", "DatasetConfig", "D3Config", "MetricWeights",
           "GainsInput", "load_config", "config_from_dict", "RiseGains", "RewardConfig",
           "DirectConfig", "EkfConfig"]
