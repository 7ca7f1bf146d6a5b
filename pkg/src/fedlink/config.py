"""Run configuration: one JSON file plus command-line overrides."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .federation import TrainConfig
from .traffic_data import PreprocessConfig
from .windowing import SplitSpec

DEFAULT_NODE_LENGTHS = (845, 945, 1445, 1047, 1445, 645, 547, 667, 967)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data_dir: str = "data"
    output_dir: str = "out"
    # None selects the bundled 9-node backbone
    topology: str | None = None
    topology_mode: str = "undirected"
    link_mode: str = "directed"

    h: int = 1
    p: int = 1
    h_values: list[int] = field(default_factory=lambda: [1, 4, 8, 12])
    p_values: list[int] = field(default_factory=lambda: [1, 4, 8, 12])

    rounds: int = 50
    hidden_size: int = 64
    dropout: float = 0.2
    lr: float = 0.001
    batch_size: int = 256
    clip_norm: float | None = 5.0
    seeds: list[int] = field(default_factory=lambda: [0])
    jobs: int = 1

    beta: float = 0.5
    q: int = 6

    scaler_scope: str = "train"
    weight_by: str = "windows"
    resample_window: int = 6
    q_low: float = 0.20
    q_high: float = 0.80
    iqr_k: float = 1.5
    smoothing_window: int = 28
    train_frac: float = 0.70
    val_frac_of_train: float = 0.20

    node_lengths: list[int] = field(default_factory=lambda: list(DEFAULT_NODE_LENGTHS))
    scale: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        choices = {
            "topology_mode": ("directed", "undirected"),
            "link_mode": ("directed", "undirected-aggregate"),
            "scaler_scope": ("train", "full"),
            "weight_by": ("windows", "raw_samples"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        positive = ["h", "p", "rounds", "hidden_size", "batch_size", "jobs", "q",
                    "resample_window", "smoothing_window"]
        for key in positive:
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"{key} must be positive")
        if not self.h_values or not self.p_values or min(self.h_values + self.p_values) < 1:
            raise ConfigError("h_values and p_values must be non-empty lists of positive integers")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must lie in [0, 1]")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not self.lr >= 0:
            raise ConfigError("lr must be non-negative")
        if not self.scale > 0:
            raise ConfigError("scale must be positive")

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            rounds=self.rounds, hidden_size=self.hidden_size, dropout=self.dropout, lr=self.lr,
            batch_size=self.batch_size, clip_norm=self.clip_norm,
            seed=self.seeds[0] if seed is None else seed, jobs=self.jobs,
        )

    def preprocess_config(self) -> PreprocessConfig:
        return PreprocessConfig(self.resample_window, self.q_low, self.q_high, self.iqr_k, self.smoothing_window)

    def split_spec(self) -> SplitSpec:
        return SplitSpec(self.train_frac, self.val_frac_of_train)

    def cells(self, sweep: bool) -> list[tuple[int, int]]:
        if not sweep:
            return [(self.h, self.p)]
        return [(h, p) for h in sorted(self.h_values) for p in sorted(self.p_values)]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **changes) -> "RunConfig":
        return from_dict({**self.to_dict(), **changes})


def from_dict(data: dict) -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
    return RunConfig(**data)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return from_dict(data)
