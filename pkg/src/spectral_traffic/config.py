"""Run configuration: one TOML/JSON file, sections per module, flag overrides."""

from __future__ import annotations

import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .behavior import BehaviorThresholds
from .dgg import EdgeWeightParams
from .forecast import ForecastConfig
from .seq_model import TrainConfig
from .traffic_data import WindowSpec


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    scene: str | None = None  # CSV path
    labels: str | None = None  # labels sidecar CSV path
    synthetic: str | None = None  # "behavior" or "clustered" when no scene file is given
    sample_rate_hz: float = 10.0


@dataclass
class WindowSection:
    obs_len: int = 30  # frames
    pred_len: int = 50  # frames
    stride: int | None = None  # frames; None means obs_len + pred_len


@dataclass
class GraphSection:
    mu_radius: float = 10.0  # meters
    k: int = 2
    clusters: int = 2
    capacity: int | None = None
    zero_init_diagonal: bool = True
    cluster_source: str = "accumulated"


@dataclass
class BehaviorSection:
    lambda1: float | None = None  # per frame; None with lambda2 None means calibrate, else the stock thresholds
    lambda2: float | None = None
    symmetric: bool = False


@dataclass
class ForecastSection:
    regularized: bool = True
    stream: str = "both"
    test_fraction: float = 0.25
    stream2_stride: int = 1  # frames

    def __post_init__(self):
        if self.stream not in ("1", "2", "both"):
            raise ValueError(f"stream must be '1', '2' or 'both', got {self.stream!r}")


@dataclass
class SynthSection:
    scenario: str = "clustered"
    duration: int | None = None  # frames
    noise_std: float | None = None  # meters

    def __post_init__(self):
        if self.scenario not in ("behavior", "clustered"):
            raise ValueError(f"unknown scenario {self.scenario!r}")


@dataclass
class RunConfig:
    seed: int | None = None
    jobs: int | None = None  # None means all available cores
    data: DataSection = field(default_factory=DataSection)
    window: WindowSection = field(default_factory=WindowSection)
    graph: GraphSection = field(default_factory=GraphSection)
    behavior: BehaviorSection = field(default_factory=BehaviorSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    forecast: ForecastSection = field(default_factory=ForecastSection)
    synth: SynthSection = field(default_factory=SynthSection)

    def to_dict(self) -> dict:
        """Effective configuration for echoing into artifacts.

        ``jobs`` is left out: it changes scheduling only, and reports must
        not differ between job counts.
        """
        d = asdict(self)
        d.pop("jobs")
        d["train"]["rng_seed"] = self.seed
        return d

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("a seed is required (--seed or 'seed' in the config file)")
        return self.seed

    def thresholds(self) -> BehaviorThresholds | None:
        b = self.behavior
        if b.lambda1 is None and b.lambda2 is None:
            return None
        if b.lambda1 is None or b.lambda2 is None:
            if b.symmetric:
                return BehaviorThresholds.symmetric(b.lambda1 if b.lambda1 is not None else b.lambda2)
            raise ConfigError("set both lambda1 and lambda2, or neither")
        return BehaviorThresholds(b.lambda1, b.lambda2)

    def window_spec(self) -> WindowSpec:
        return WindowSpec(self.window.obs_len, self.window.pred_len)

    def forecast_config(self) -> ForecastConfig:
        g = self.graph
        try:
            return ForecastConfig(
                window=self.window_spec(),
                edge_params=EdgeWeightParams(g.mu_radius),
                k_eigenvectors=g.k,
                n_clusters=g.clusters,
                thresholds=self.thresholds(),
                train=replace(self.train, rng_seed=self.seed if self.seed is not None else self.train.rng_seed),
                regularized=self.forecast.regularized,
                capacity=g.capacity,
                zero_init_diagonal=g.zero_init_diagonal,
                cluster_source=g.cluster_source,
                stride=self.window.stride,
                stream2_stride=self.forecast.stream2_stride,
                test_fraction=self.forecast.test_fraction,
                jobs=self.jobs or os.cpu_count() or 1,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


SECTIONS = {
    "data": DataSection,
    "window": WindowSection,
    "graph": GraphSection,
    "behavior": BehaviorSection,
    "train": TrainConfig,
    "forecast": ForecastSection,
    "synth": SynthSection,
}


def _build(cls, values: Mapping[str, Any], where: str):
    known = {f.name for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown config key '{where}{key}'")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid values in {where.rstrip('.') or 'top level'}: {exc}") from exc


def from_mapping(values: Mapping[str, Any]) -> RunConfig:
    top = dict(values)
    for name, cls in SECTIONS.items():
        if name in top:
            if not isinstance(top[name], Mapping):
                raise ConfigError(f"config key {name!r} must be a table")
            top[name] = _build(cls, top[name], f"{name}.")
    return _build(RunConfig, top, "")


def load(path: str | Path) -> RunConfig:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from exc
    try:
        if p.suffix.lower() == ".json":
            values = json.loads(raw.decode("utf-8"))
        else:
            values = tomllib.loads(raw.decode("utf-8"))
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {p}: {exc}") from exc
    if not isinstance(values, Mapping):
        raise ConfigError(f"config {p} must be a table at top level")
    return from_mapping(values)


def with_overrides(config: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    """Apply dotted-key overrides (``graph.mu_radius``); ``None`` values are skipped."""
    d = asdict(config)
    for key, val in overrides.items():
        if val is None:
            continue
        node = d
        *parents, leaf = key.split(".")
        for part in parents:
            node = node[part]
        if leaf not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[leaf] = val
    return from_mapping(d)
