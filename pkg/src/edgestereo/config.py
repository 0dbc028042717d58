"""Run configuration: model, phase plan, data source, output and seed.

Stored as JSON, e.g.::

    {
      "seed": 0,
      "out_dir": "runs/toy",
      "model": {"pyramid": "P-1_2_4_8", "scales": 4, "max_disp": 4},
      "training": {"phases": [{"id": 1, "iterations": 300, "lr": 0.001}, ...]},
      "data": {"n_samples": 64, "height": 32, "width": 64, "d_max": 8}
    }

Missing sections fall back to the desk-scale defaults.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .model import ModelConfig
from .training import PhasePlan


@dataclass
class DataConfig:
    manifest: str | None = None
    n_samples: int = 64
    holdout: int = 16
    height: int = 32
    width: int = 64
    d_max: int = 8
    max_layers: int = 3
    texture: str = "value-noise"
    random_background: bool = True


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    training: PhasePlan = field(default_factory=PhasePlan.default)
    data: DataConfig = field(default_factory=DataConfig)
    out_dir: str = "runs/default"
    seed: int = 0
    checkpoint_every: int = 0

    def validate(self) -> "RunConfig":
        self.model.pyramid_config  # raises on a malformed notation
        if self.data.manifest is not None and not Path(self.data.manifest).exists():
            raise FileNotFoundError(f"dataset manifest {self.data.manifest} does not exist")
        return self

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "training": self.training.to_dict(),
            "data": asdict(self.data),
            "out_dir": self.out_dir,
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(
            model=ModelConfig(**d.get("model", {})),
            training=PhasePlan.from_dict(d["training"]) if "training" in d else PhasePlan.default(),
            data=DataConfig(**d.get("data", {})),
            out_dir=d.get("out_dir", "runs/default"),
            seed=int(d.get("seed", 0)),
            checkpoint_every=int(d.get("checkpoint_every", 0)),
        ).validate()


def load_config(path) -> RunConfig:
    return RunConfig.from_dict(json.loads(Path(path).read_text()))


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")
