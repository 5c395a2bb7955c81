import json
import os
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from channel_model import (
    CUSTOM,
    RAYLEIGH,
    SIMPLIFIED,
    NetworkInstance,
    make_simplified_instance,
    sample_rayleigh_instance,
)
from dtmc_analysis import DtmcParams


DEFAULT_MAX_POWER = 10.0
DEFAULT_NOISE = 1.0
DEFAULT_GAMMA = 3.0


def results_dir() -> str:
    return os.getenv("TE_RESULTS_DIR", "results")


def data_dir() -> str:
    return os.getenv("TE_DATA_DIR", "data")


def default_workers() -> int:
    return max(1, int(os.getenv("TE_WORKERS", "1")))


def log_level() -> str:
    return os.getenv("TE_LOG_LEVEL", "INFO").upper()


class InstanceConfig(BaseModel):
    """Flat instance description: K, C, Q, p_max, noise, gamma, beta, channel, seed."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid", frozen=True)

    num_players: int = Field(alias="K", ge=1)
    num_channels: int = Field(alias="C", ge=1)
    num_power_levels: int = Field(alias="Q", ge=2)
    max_power: float = Field(DEFAULT_MAX_POWER, alias="p_max", gt=0)
    noise_power: float = Field(DEFAULT_NOISE, alias="noise", gt=0)
    sinr_threshold: float = Field(DEFAULT_GAMMA, alias="gamma", gt=0)
    beta: Optional[float] = Field(None, gt=0)
    channel: Literal["simplified", "rayleigh", "custom"] = SIMPLIFIED
    seed: Optional[int] = 0
    gains_csv: Optional[str] = None

    @model_validator(mode="after")
    def _custom_needs_gains(self):
        if self.channel == CUSTOM and not self.gains_csv:
            raise ValueError("channel 'custom' requires gains_csv")
        return self

    @property
    def effective_beta(self) -> float:
        return self.beta if self.beta is not None else self.num_players + 1.0

    def build(self) -> NetworkInstance:
        args = (
            self.num_players,
            self.num_channels,
            self.num_power_levels,
            self.max_power,
            self.noise_power,
            self.sinr_threshold,
            self.effective_beta,
        )
        if self.channel == RAYLEIGH:
            return sample_rayleigh_instance(*args, seed=self.seed or 0)
        if self.channel == CUSTOM:
            # deferred: the repository layer imports this module
            from repositories.instances_repo import read_gains_csv

            gains = read_gains_csv(self.gains_csv, self.num_players, self.num_channels)
            return NetworkInstance(
                num_players=self.num_players,
                num_channels=self.num_channels,
                num_power_levels=self.num_power_levels,
                max_power=self.max_power,
                noise_power=self.noise_power,
                sinr_threshold=self.sinr_threshold,
                gains=gains,
                beta=self.effective_beta,
                channel=CUSTOM,
                seed=self.seed,
            )
        return make_simplified_instance(*args)

    def flat(self) -> dict:
        return self.model_dump(by_alias=True, exclude_none=True)


MetricName = Literal["occupancy", "passage", "curves", "trace"]


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    instance: Optional[InstanceConfig] = None
    instance_path: Optional[str] = None
    epsilon: float = Field(0.02, gt=0, lt=1)
    iterations: int = Field(1_000_000, ge=1)
    trials: int = Field(1, ge=1)
    seed: int = 0
    target: Literal["ne", "se"] = "ne"
    delta_u: float = Field(0.0, ge=0, le=1)
    metrics: List[MetricName] = Field(default_factory=lambda: ["occupancy", "passage"])
    out: str = Field(default_factory=results_dir)
    workers: int = Field(default_factory=default_workers, ge=1)
    enumeration_cap: Optional[int] = Field(None, ge=1)
    trace: bool = False

    @model_validator(mode="after")
    def _needs_instance(self):
        if self.instance is None and not self.instance_path:
            raise ValueError("either instance or instance_path is required")
        return self

    def instance_config(self) -> InstanceConfig:
        if self.instance is not None:
            return self.instance
        return load_instance_config(self.instance_path)


class AnalyzeRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    K: int = Field(ge=1)
    C: int = Field(ge=2)
    Q: int = Field(ge=2)
    eps: float = Field(0.02, gt=0, lt=1)
    gamma: float = Field(DEFAULT_GAMMA, gt=0)
    pmax: float = Field(DEFAULT_MAX_POWER, gt=0)
    noise: float = Field(DEFAULT_NOISE, gt=0)
    target: Literal["ne", "se"] = "ne"
    du: float = Field(0.0, ge=0, le=1)

    def instance(self) -> NetworkInstance:
        return make_simplified_instance(self.K, self.C, self.Q, self.pmax, self.noise, self.gamma, self.K + 1.0)

    def to_params(self) -> DtmcParams:
        return DtmcParams.from_instance(self.instance(), self.eps, self.du)


def load_instance_config(path: str) -> InstanceConfig:
    with open(path) as f:
        return InstanceConfig.model_validate(json.load(f))


def load_experiment_config(path: str) -> ExperimentConfig:
    with open(path) as f:
        data = json.load(f)
    cfg = ExperimentConfig.model_validate(data)
    if cfg.instance_path and not os.path.isabs(cfg.instance_path):
        # relative to the experiment file
        resolved = str(Path(path).parent / cfg.instance_path)
        cfg = cfg.model_copy(update={"instance_path": resolved})
    return cfg


def instance_from_config(data: dict, gains_csv: Optional[str] = None) -> NetworkInstance:
    """Inverse of NetworkInstance.to_config; custom gains come from `gains_csv`."""
    data = {k: v for k, v in data.items() if v is not None}
    if gains_csv:
        data = {**data, "channel": CUSTOM, "gains_csv": gains_csv}
    return InstanceConfig.model_validate(data).build()
