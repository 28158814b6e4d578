"""Experiment configuration.

Defaults follow the MNIST setup: Adam with 7e-4 for weights and gates,
dual ascent with 1e-3, dual restarts on, batch size 128, no weight decay.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

from .sparse_net import PrimalOptimizerConfig

METHODS = ("constrained", "penalized", "magnitude_prune")
GROUPINGS = ("model_wise", "layer_wise")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    arch: dict = field(default_factory=lambda: {"kind": "mlp", "hidden": [300, 100], "gating": "input"})
    data: dict = field(default_factory=lambda: {"kind": "mnist", "dir": "data/mnist", "n_train": 50000})
    method: str = "constrained"
    grouping: str = "model_wise"
    epsilon: Union[float, list] = 0.5
    lambda_pen: Union[float, list] = 0.0
    normalization: str = "by_param_count"
    optimizer: PrimalOptimizerConfig = field(default_factory=PrimalOptimizerConfig)
    eta_dual: float = 1e-3
    restarts: bool = True
    rho_init: float = 0.3
    init_noise_std: float = 0.1
    epochs: int = 20
    max_steps: Optional[int] = None
    batch_size: int = 128
    seed: int = 0
    log_every: int = 50
    eval_batch_size: int = 1000
    finetune_epochs: int = 0
    finetune_lr: float = 1e-3
    name: str = ""

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = PrimalOptimizerConfig(**self.optimizer)
        self.validate()

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.grouping not in GROUPINGS:
            raise ConfigError(f"grouping must be one of {GROUPINGS}, got {self.grouping!r}")
        if self.normalization not in ("by_param_count", "by_dataset_size"):
            raise ConfigError(f"unknown normalization {self.normalization!r}")
        for name in ("epsilon", "lambda_pen"):
            vals = getattr(self, name)
            vals = vals if isinstance(vals, list) else [vals]
            if not vals or any(not isinstance(v, (int, float)) or v < 0 for v in vals):
                raise ConfigError(f"{name} must be a nonnegative number or list of numbers")
        if not 0.0 < self.rho_init < 1.0:
            raise ConfigError("rho_init must lie in (0, 1)")
        if self.eta_dual <= 0:
            raise ConfigError("eta_dual must be positive")
        if self.epochs < 0 or self.batch_size < 1 or self.log_every < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1 and log_every >= 1 are required")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        if not isinstance(self.arch, dict) or self.arch.get("kind") not in ("mlp", "lenet5", "layers"):
            raise ConfigError("arch.kind must be 'mlp', 'lenet5' or 'layers'")
        if not isinstance(self.data, dict) or self.data.get("kind") not in ("mnist", "synthetic", "npz", "digits"):
            raise ConfigError("data.kind must be 'mnist', 'synthetic', 'npz' or 'digits'")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"]["betas"] = list(d["optimizer"]["betas"])
        return d

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))
