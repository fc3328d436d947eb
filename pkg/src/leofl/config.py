"""Scenario configuration files.

A scenario is a single YAML document. Angles are given in degrees here and
converted to radians exactly once, when orbital objects are built.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import orbital
from .data import MNIST_FILES, PartitionMode, PartitionSpec, resolve_data_dir
from .learning import TrainConfig

BUNDLED_DIR = Path(__file__).parent / "scenarios"


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ShellConfig(_Strict):
    name: str = ""
    altitude_km: float = Field(gt=0)
    inclination_deg: float = Field(ge=0, le=180)
    total: int = Field(ge=0)
    planes: int = Field(ge=1)
    phasing: int = Field(default=1, ge=0)
    raan_offset_deg: float = 0.0

    @model_validator(mode="after")
    def _walker_rules(self):
        if self.total % self.planes:
            raise ValueError(f"planes ({self.planes}) must divide total ({self.total})")
        if self.phasing >= self.planes:
            raise ValueError("phasing must be smaller than the number of planes")
        return self

    def to_walker(self) -> orbital.WalkerSpec:
        return orbital.WalkerSpec(
            total=self.total,
            planes=self.planes,
            phasing=self.phasing,
            inclination=math.radians(self.inclination_deg),
            altitude=self.altitude_km,
            raan_offset=math.radians(self.raan_offset_deg) % (2 * math.pi),
        )


class GroundStationConfig(_Strict):
    name: str = ""
    latitude_deg: float = Field(ge=-90, le=90)
    longitude_deg: float
    altitude_km: float = 0.0
    min_elevation_deg: float = Field(ge=0, lt=90)

    def to_ground_station(self) -> orbital.GroundStation:
        return orbital.GroundStation(
            latitude=math.radians(self.latitude_deg),
            longitude=math.radians(self.longitude_deg),
            altitude=self.altitude_km,
            min_elevation=math.radians(self.min_elevation_deg),
            name=self.name,
        )


class PartitionConfig(_Strict):
    mode: PartitionMode = PartitionMode.IID
    # one class list per shell, in shell order (class_split only)
    classes_per_shell: Optional[list[list[int]]] = None
    seed: int = 0


class SyntheticConfig(_Strict):
    classes: int = Field(ge=1)
    per_class: int = Field(ge=1)
    test_per_class: int = Field(ge=1)
    dim: int = Field(ge=1)
    separation: float = 4.0
    seed: int = 0


class DataConfig(_Strict):
    source: Literal["mnist", "synthetic"]
    mnist_dir: Optional[str] = None
    scaling: Literal["unit", "standardize"] = "unit"
    synthetic: Optional[SyntheticConfig] = None
    partition: PartitionConfig = PartitionConfig()

    @model_validator(mode="after")
    def _source_fields(self):
        if self.source == "synthetic" and self.synthetic is None:
            raise ValueError("synthetic data source needs a 'synthetic' section")
        return self


class TrainingConfig(_Strict):
    learning_rate: float = Field(ge=0)
    prox_weight: float = Field(default=0.0, ge=0)
    batch_size: int = Field(ge=1)
    local_epochs: int = Field(default=1, ge=1)


class StalenessConfig(_Strict):
    epsilon: float = Field(ge=0)
    a_factor: float = Field(gt=0)
    a_form: Literal["verbatim", "reciprocal"] = "verbatim"


class StrategyConfig(_Strict):
    name: Literal["fedavg", "fedasync", "fedsat"]
    base_mix: Optional[float] = Field(default=None, gt=0, le=1)
    learning_rate: Optional[float] = Field(default=None, ge=0)
    staleness: Optional[StalenessConfig] = None
    schedule_threshold: float = Field(default=0.0, ge=0)

    @model_validator(mode="after")
    def _per_strategy(self):
        if self.name == "fedasync" and self.base_mix is None:
            raise ValueError("fedasync needs base_mix")
        if self.name != "fedasync" and (self.base_mix is not None or self.staleness is not None):
            raise ValueError(f"base_mix/staleness only apply to fedasync, not {self.name}")
        return self


class SimulationConfig(_Strict):
    horizon_s: float = Field(gt=0)
    seed: int = 0
    output: Optional[str] = None
    event_log: Optional[str] = None
    compute_duration_s: float = Field(default=0.0, ge=0)
    exchange_delay_s: float = Field(default=0.0, ge=0)


class ScenarioConfig(_Strict):
    name: str
    constellation: list[ShellConfig]
    ground_station: GroundStationConfig
    data: DataConfig
    training: TrainingConfig
    strategy: StrategyConfig
    simulation: SimulationConfig

    @model_validator(mode="after")
    def _cross_checks(self):
        part = self.data.partition
        if part.mode is PartitionMode.CLASS_SPLIT:
            populated = [s for s in self.constellation if s.total > 0]
            if len(populated) < 2:
                raise ValueError("class_split partitioning needs at least two populated shells")
            if part.classes_per_shell is None or len(part.classes_per_shell) != len(self.constellation):
                raise ValueError("class_split needs one class list per shell")
        return self

    # -- derived objects ---------------------------------------------------

    def walkers(self) -> list[orbital.WalkerSpec]:
        return [shell.to_walker() for shell in self.constellation]

    def satellites(self) -> list[orbital.SatelliteSpec]:
        return orbital.build_constellation(self.walkers())

    def ground(self) -> orbital.GroundStation:
        return self.ground_station.to_ground_station()

    def max_period(self) -> float:
        populated = [s for s in self.constellation if s.total > 0]
        return max(orbital.orbital_period(orbital.EARTH_RADIUS_KM + s.altitude_km) for s in populated)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        lr = self.training.learning_rate
        if self.strategy.learning_rate is not None:
            lr = self.strategy.learning_rate
        return TrainConfig(
            learning_rate=lr,
            prox_weight=self.training.prox_weight,
            batch_size=self.training.batch_size,
            local_epochs=self.training.local_epochs,
            rng_seed=self.simulation.seed if seed is None else seed,
        )

    def partition_spec(self) -> PartitionSpec:
        part = self.data.partition
        assignment = {}
        if part.classes_per_shell is not None:
            assignment = {i: list(cs) for i, cs in enumerate(part.classes_per_shell) if self.constellation[i].total}
        return PartitionSpec(part.mode, assignment, part.seed)

    def check_files(self) -> None:
        if self.data.source == "mnist":
            root = resolve_data_dir(self.data.mnist_dir)
            for split in MNIST_FILES.values():
                for name in split:
                    if not (root / name).exists():
                        raise FileNotFoundError(f"missing data file {root / name}")


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{where}: {err['msg']}")
    return "; ".join(lines)


def parse_scenario(mapping: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(mapping)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def resolve_path(ref) -> Path:
    """Accept either a file path or the name of a bundled scenario."""
    path = Path(ref)
    if path.exists():
        return path
    bundled = BUNDLED_DIR / f"{ref}.yaml"
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"no scenario file or bundled scenario named {ref!r}")


def load_scenario(ref) -> ScenarioConfig:
    path = resolve_path(ref)
    try:
        mapping = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return parse_scenario(mapping)


def dump_scenario(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)


def bundled_scenarios() -> list[str]:
    return sorted(str(p.relative_to(BUNDLED_DIR).with_suffix("")) for p in BUNDLED_DIR.rglob("*.yaml"))
