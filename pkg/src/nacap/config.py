"""Run configuration: model dims, training schedule, data and inference knobs.

Shipped profiles live in nacap/profiles/: desk.json runs end to end on one
CPU core; paper.json records the full-scale hyperparameters for reference
and is not meant to be trained at desk scale.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

from .data import ConfigError
from .params import ModelConfig


@dataclass
class RunConfig:
    # model
    d_model: int = 64
    d_hidden: int = 128
    layers: int = 1
    heads: int = 2
    dropout: float = 0.1
    # training
    lr: float = 5e-4
    beta1: float = 0.8
    beta2: float = 0.999
    batch_size: int = 32
    epochs_phase1: int = 10
    epochs_phase2: int = 10
    lambda_length: float = 0.1
    seed: int = 0
    # data
    min_count: int = 1
    k_max: int = 6
    d_in: int = 32
    scenes: int = 2000
    grammar: str | None = None
    # inference
    infer_mode: str = "fnic-ndt"
    n_max: int = 24
    m_max: int = 8

    def __post_init__(self):
        for name in ("d_model", "d_hidden", "layers", "heads", "batch_size",
                     "k_max", "d_in", "n_max", "m_max", "min_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.seed is None:
            raise ConfigError("seed is required; no implicit randomness")

    def model_config(self, vocab_size):
        return ModelConfig(
            vocab_size=vocab_size,
            d_model=self.d_model,
            d_hidden=self.d_hidden,
            layers=self.layers,
            heads=self.heads,
            dropout=self.dropout,
            d_in=self.d_in,
            n_max=self.n_max,
            m_max=self.m_max,
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, raw):
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_file(cls, path, overrides=None):
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        raw.update(overrides or {})
        return cls.from_dict(raw)


def load_profile(name, overrides=None):
    """Load a shipped profile ("desk" or "paper") with optional overrides."""
    ref = resources.files("nacap").joinpath(f"profiles/{name}.json")
    raw = json.loads(ref.read_text(encoding="utf-8"))
    raw.update(overrides or {})
    return RunConfig.from_dict(raw)
