"""Run configuration: one JSON file drives every pipeline stage.

The file round-trips losslessly; every run writes its resolved config
next to its outputs.  All randomness flows from the single ``seed``
through named sub-seeds (geometry, boundary, init, shuffle, pairs,
trees).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .graphs import SimParams

__all__ = ["RunConfig", "sub_seed"]

CONFIG_VERSION = 1


def sub_seed(seed: int, name: str) -> int:
    """Stable named sub-seed derived from the master seed."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass
class BoundaryConfig:
    c_in: float = 1.0
    lambda_in: float = 1.0


@dataclass
class DecompositionConfig:
    h: float = 1.0
    sections_per_pipe: int = 8


@dataclass
class ModelConfig:
    l_steps: int = 3


@dataclass
class TrainingConfig:
    epochs: int = 200
    batch_size: int = 32
    split: float = 0.75
    k_folds: int = 4
    alpha: float = 10.0
    residual_weight: float = 1.0
    lr_initial: float = 1e-3
    lr_floor: float = 1e-6
    lr_factor: float = 0.1
    lr_period: int = 50


@dataclass
class DatasetConfig:
    n_pipes: int = 50
    n_bifurcations: int = 50
    n_boundary_values: int = 20
    boundary_range: tuple[float, float] = (0.1, 2.0)
    samples_per_run: int = 2
    tol: float = 1e-4
    max_time: float = 600.0
    pairs_per_kind: int = 30
    pair_boundary_values: int = 6
    pair_samples_per_run: int = 4


@dataclass
class SimulateConfig:
    tol: float = 1e-6
    max_time: float = 2000.0
    store_every: int = 1


@dataclass
class PredictConfig:
    horizon_s: float = 60.0
    store_every: int = 10


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    params: SimParams = field(default_factory=SimParams)
    boundary: BoundaryConfig = field(default_factory=BoundaryConfig)
    decomposition: DecompositionConfig = field(default_factory=DecompositionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    predict: PredictConfig = field(default_factory=PredictConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        parts = {
            "params": SimParams,
            "boundary": BoundaryConfig,
            "decomposition": DecompositionConfig,
            "model": ModelConfig,
            "training": TrainingConfig,
            "dataset": DatasetConfig,
            "simulate": SimulateConfig,
            "predict": PredictConfig,
        }
        kwargs = {}
        for key, typ in parts.items():
            if key in d:
                sub = dict(d.pop(key))
                if key == "dataset" and "boundary_range" in sub:
                    sub["boundary_range"] = tuple(sub["boundary_range"])
                kwargs[key] = typ(**sub)
        kwargs.update(d)
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())
