"""Run configuration shared by training, evaluation and the CLI."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields

from .fusion import Granularity
from .objective import DEFAULT_TEMPERATURE
from .perturbation import PerturbMode


def _key(name: str):
    return field(metadata={"key": name})


@dataclass
class RunConfig:
    epochs: int = 5
    batch_size: int = 32
    frames: int = 12
    d_model: int = 512
    lr: float = 1e-4  # modules introduced by this model
    lr_projection: float = 1e-5  # inherited input projections
    lr_gate: float | None = None  # fusion gate; None means lr
    weight_decay: float = 0.2
    dropout: float = 0.3  # on attention weights, training only
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    seed: int = 0
    precision: str = "f32"
    std_init_bias: float = -4.0
    granularity: str = field(default="frame", metadata={"key": "fusion.granularity"})
    perturb_mode: str = field(default="dasp", metadata={"key": "perturb.mode"})
    stp_samples: int = field(default=20, metadata={"key": "perturb.stp_samples"})
    lam: float = field(default=0.8, metadata={"key": "loss.lambda"})
    init_temperature: float = field(default=DEFAULT_TEMPERATURE, metadata={"key": "loss.init_temperature"})
    dsl_beta: float = field(default=100.0, metadata={"key": "eval.dsl_beta"})

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        Granularity(self.granularity)
        PerturbMode(self.perturb_mode)
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be f32 or f64, got {self.precision!r}")
        for name in ("batch_size", "frames", "d_model", "stp_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.lam < 0 or self.lr < 0 or self.lr_projection < 0 or self.weight_decay < 0:
            raise ValueError("lam, learning rates and weight_decay must be non-negative")
        if self.lr_gate is not None and self.lr_gate < 0:
            raise ValueError("lr_gate must be non-negative")
        if self.init_temperature <= 0:
            raise ValueError("init_temperature must be positive")

    @classmethod
    def keys(cls) -> dict[str, str]:
        """Map from JSON key (dotted for sectioned options) to field name."""
        return {f.metadata.get("key", f.name): f.name for f in fields(cls)}

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        flat = _flatten(doc)
        keys = cls.keys()
        unknown = sorted(set(flat) - set(keys))
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        cfg = cls(**{keys[k]: v for k, v in flat.items()})
        if "GAID_SEED" in os.environ:
            cfg.seed = int(os.environ["GAID_SEED"])
        return cfg

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out: dict = {}
        values = asdict(self)
        for f in fields(self):
            key = f.metadata.get("key", f.name)
            if "." in key:
                section, name = key.split(".", 1)
                out.setdefault(section, {})[name] = values[f.name]
            else:
                out[key] = values[f.name]
        return out

    def replace(self, **changes) -> "RunConfig":
        return RunConfig(**{**asdict(self), **changes})


def _flatten(doc: dict, prefix: str = "") -> dict:
    flat = {}
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            flat.update(_flatten(v, key + "."))
        else:
            flat[key] = v
    return flat


def describe_defaults() -> str:
    """One line per config key with its default, for ``--help``."""
    d = RunConfig()
    return "\n".join(f"  {key} = {getattr(d, name)!r}" for key, name in RunConfig.keys().items())
