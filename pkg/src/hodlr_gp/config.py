"""JSON run configuration with strict key checking."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import get_type_hints

MODELS = ("wind", "adr", "matern", "nonstationary1d")


class ConfigError(ValueError):
    """Malformed configuration or input file (exit code 2)."""


class ResourceGuardError(RuntimeError):
    """A problem size exceeds a dense or memory guard (exit code 3)."""


@dataclass
class ModelConfig:
    name: str = "wind"
    n: int | None = None          # number of observation locations
    grid: int | None = None       # parent grid points per axis (overrides n)
    coarsen: int = 1
    thin: float = 1.0
    mesh_factor: float = 1.0      # mesh spacing = observation spacing / mesh_factor
    theta_true: list | None = None
    noise_fraction: float | None = None
    nugget: float = 0.1           # matern and nonstationary1d: known noise variance
    sigma: float = 1.0            # nonstationary1d: known variance
    x_range: list = field(default_factory=lambda: [0.0, 10.0])
    dx: float = 0.05


@dataclass
class HodlrBlock:
    rank: int = 128
    leaf_min: int = 256
    leaf_max: int = 512
    sketch_seed: int = 0


@dataclass
class FitBlock:
    theta0: list | None = None
    rel_tol: float = 1e-6
    max_iter: int = 100
    method: str = "hodlr"


@dataclass
class BenchBlock:
    sizes: list = field(default_factory=lambda: [512, 1024, 2048])
    ranks: list = field(default_factory=lambda: [32])
    repeats: int = 1
    theta: list | None = None


@dataclass
class AccuracyBlock:
    theta: list | None = None
    n_seeds: int = 5


@dataclass
class DemoBlock:
    n_seeds: int = 20
    theta_true: list = field(default_factory=lambda: [0.1, 0.6])
    theta0: list | None = None
    sigma: float = 1.0
    nugget: float = 0.1
    rel_tol: float = 1e-6
    max_iter: int = 100


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    hodlr: HodlrBlock = field(default_factory=HodlrBlock)
    fit: FitBlock = field(default_factory=FitBlock)
    bench: BenchBlock = field(default_factory=BenchBlock)
    accuracy: AccuracyBlock = field(default_factory=AccuracyBlock)
    demo: DemoBlock = field(default_factory=DemoBlock)
    dataset: str | None = None
    metadata: str | None = None
    out: str | None = None
    seed: int = 0

    def validate(self) -> None:
        m = self.model
        if m.name not in MODELS:
            raise ConfigError(f"model.name must be one of {MODELS}, got {m.name!r}")
        if m.coarsen < 1:
            raise ConfigError("model.coarsen must be >= 1")
        if not 0 < m.thin <= 1:
            raise ConfigError("model.thin must lie in (0, 1]")
        if m.mesh_factor <= 0:
            raise ConfigError("model.mesh_factor must be positive")
        h = self.hodlr
        if h.rank < 1 or h.leaf_min < 1 or h.leaf_max < 2 * h.leaf_min - 1:
            raise ConfigError("hodlr block needs rank >= 1 and leaf_max >= 2 leaf_min - 1")
        if self.fit.method not in ("hodlr", "dense"):
            raise ConfigError("fit.method must be 'hodlr' or 'dense'")
        if self.fit.rel_tol <= 0 or self.fit.max_iter < 1:
            raise ConfigError("fit.rel_tol must be positive and fit.max_iter >= 1")
        if self.bench.repeats < 1:
            raise ConfigError("bench.repeats must be >= 1")
        if self.accuracy.n_seeds < 1 or self.demo.n_seeds < 1:
            raise ConfigError("seed counts must be >= 1")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    hints = get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        tp = hints[name]
        if isinstance(tp, type) and is_dataclass(tp):
            kwargs[name] = _build(tp, value, f"{where}.{name}" if where else name)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data, "")
    try:
        cfg.validate()
    except TypeError as exc:
        raise ConfigError(f"wrong value type in config: {exc}") from exc
    return cfg


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)
