"""
Experiment Configuration.

One YAML document configures every stage: plant, network, training, dataset,
cost, bounds, horizon, solver, clock, endpoints and the closed-loop scenario.
Sections map onto frozen dataclasses; omitted keys keep their compiled-in
defaults and unknown keys are rejected. Values are resolved in this order,
later sources winning:

    compiled defaults < preset (config/<name>.yaml) < --config file < --set a.b=v
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Any, Sequence

import yaml

from lstm_nmpc.errors import ConfigError
from lstm_nmpc.nn_core import NetworkSpec
from lstm_nmpc.ocp import DEFAULT_HORIZON, Bounds, CostWeights, Reference
from lstm_nmpc.sqp_solver import SolverConfig
from lstm_nmpc.surrogate_plant import PlantParams
from lstm_nmpc.trainer import TrainConfig

logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).resolve().parents[2] / "config"
SNAPSHOT_NAME = "config_snapshot.yaml"


@dataclass(frozen=True)
class NetworkConfig:
    fc_in: tuple = (24, 24, 16)
    fc_out: tuple = (24, 24)
    fc_activation: str = "tanh"
    lstm_activation: str = "tanh"

    def spec(self) -> NetworkSpec:
        return NetworkSpec.from_widths(
            self.fc_in, self.fc_out, self.fc_activation, self.lstm_activation
        )


@dataclass(frozen=True)
class DatasetConfig:
    n_cycles: int = 20000
    train_fraction: float = 0.8
    max_hold: int = 12


@dataclass(frozen=True)
class ClockConfig:
    """Engine period, compute budget and fault injection of the split loop."""

    period_ms: float = 80.0
    budget_ms: float = 22.0
    loss_rate: float = 0.0

    def __post_init__(self):
        if self.period_ms <= 0 or not 0 < self.budget_ms < self.period_ms:
            raise ValueError("clock needs 0 < budget_ms < period_ms")
        if not 0.0 <= self.loss_rate <= 1.0:
            raise ValueError("loss_rate must lie in [0, 1]")


@dataclass(frozen=True)
class EndpointConfig:
    plant_host: str = "127.0.0.1"
    plant_port: int = 47100
    controller_host: str = "127.0.0.1"
    controller_port: int = 47101


@dataclass(frozen=True)
class ClosedLoopConfig:
    """Reference scenario, initial actuation and stability envelope of a run."""

    n_cycles: int = 650
    warmup_cycles: int = 10
    step_hold: int = 50
    imep_levels: tuple = (3.0, 4.0, 2.5, 5.0, 3.5, 2.0, 4.5)
    ca50_reference: float = 6.0
    reference_csv: str = ""
    u_init: tuple = (0.7, 0.2, 255.0)
    settle_cycles: int = 10
    envelope_factor: float = 5.0

    def __post_init__(self):
        if self.n_cycles <= self.warmup_cycles or self.warmup_cycles < 0:
            raise ValueError("n_cycles must exceed warmup_cycles >= 0")
        if self.envelope_factor <= 1.0:
            raise ValueError("envelope_factor must exceed 1")

    def reference(self) -> Reference:
        if self.reference_csv:
            return Reference.read_csv(self.reference_csv, self.n_cycles)
        return Reference.step_profile(
            self.n_cycles, self.imep_levels, self.step_hold, self.ca50_reference
        )


@dataclass(frozen=True)
class ExperimentConfig:
    plant: PlantParams = field(default_factory=PlantParams)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    cost: CostWeights = field(default_factory=CostWeights)
    bounds: Bounds = field(default_factory=Bounds)
    horizon: int = DEFAULT_HORIZON
    solver: SolverConfig = field(default_factory=SolverConfig)
    clock: ClockConfig = field(default_factory=ClockConfig)
    endpoints: EndpointConfig = field(default_factory=EndpointConfig)
    closed_loop: ClosedLoopConfig = field(default_factory=ClosedLoopConfig)
    seed: int = 0
    output_dir: str = "artifacts"

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least one cycle")


def _coerce(value: Any, default: Any, path: str) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, str):
            # PyYAML reads exponents without a dot, such as 1e-4, as strings
            try:
                return float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if value is None:
            return ""
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return tuple(value)
    return value


def _build(cls, data: Any, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {data!r}")
    defaults = cls()
    known = {item.name: item for item in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join(path + key for key in unknown)}")
    values = {}
    for name, value in data.items():
        default = getattr(defaults, name)
        key = path + name
        if dataclasses.is_dataclass(default):
            values[name] = _build(type(default), value, key + ".")
        else:
            values[name] = _coerce(value, default, key)
    try:
        return dataclasses.replace(defaults, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path.rstrip('.') or 'config'}: {exc}") from exc


def config_from_dict(data: dict | None) -> ExperimentConfig:
    """Build a validated config; raises ConfigError on unknown keys or bad values."""
    return _build(ExperimentConfig, data, "")


def _plain(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_plain(item) for item in value]
    return value


def config_to_dict(config: ExperimentConfig) -> dict:
    """Nested plain-data form of a config, suitable for YAML."""

    def walk(node):
        return {
            item.name: walk(getattr(node, item.name))
            if dataclasses.is_dataclass(getattr(node, item.name))
            else _plain(getattr(node, item.name))
            for item in dataclasses.fields(node)
        }

    return walk(config)


def _merge(base: dict, update: dict) -> dict:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _read_yaml(path: Path) -> dict:
    try:
        with open(path, encoding="utf-8") as handle:
            data = yaml.safe_load(handle)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def parse_override(text: str) -> dict:
    """Turn `section.key=value` into a nested dict; the value is read as YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    dotted, raw = text.split("=", 1)
    keys = [key for key in dotted.strip().split(".") if key]
    if not keys:
        raise ConfigError(f"override {text!r} has no key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from exc
    for key in reversed(keys):
        value = {key: value}
    return value


def load_config(
    path: str | PathLike | None = None,
    preset: str | None = None,
    overrides: Sequence[str] = (),
) -> ExperimentConfig:
    """
    Resolve a config from a preset, a file and `--set` overrides.

    Raises:
        ConfigError: If the preset does not exist or any source is invalid.
    """
    data: dict = {}
    if preset:
        preset_path = PRESET_DIR / f"{preset}.yaml"
        if not preset_path.is_file():
            available = sorted(p.stem for p in PRESET_DIR.glob("*.yaml"))
            raise ConfigError(f"unknown preset {preset!r}; available: {', '.join(available)}")
        data = _merge(data, _read_yaml(preset_path))
        logger.debug("Applied preset %s", preset_path)
    if path:
        data = _merge(data, _read_yaml(Path(path)))
        logger.debug("Applied config file %s", path)
    for text in overrides:
        data = _merge(data, parse_override(text))
    return config_from_dict(data)


def save_config(config: ExperimentConfig, destination: str | PathLike) -> Path:
    """Write the resolved config; a directory gets `config_snapshot.yaml`."""
    path = Path(destination)
    if path.is_dir() or not path.suffix:
        path = path / SNAPSHOT_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(config_to_dict(config), handle, sort_keys=False)
    return path
