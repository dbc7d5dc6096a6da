# utils/generator.py

"""Synthetic training data: a decaying transient or the two-tone periodic reference sin(2t) + 0.5 sin(4t + 1)."""

import logging
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from gp.posterior import Dataset, DatasetRole


class GeneratorKind(str, Enum):
    TRANSIENT = "transient"
    PERIODIC = "periodic"


class GeneratorConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: GeneratorKind = GeneratorKind.TRANSIENT
    n: int = Field(30, ge=1)
    t_start: float = Field(0.0, ge=0.0)
    t_end: float = 0.6
    endpoint: bool = True
    noise_std: float = Field(0.0, ge=0.0)
    # transient only
    y_start: float = -1.0
    y_end: float = 0.04
    time_constant: float = Field(0.1, gt=0.0)

    @model_validator(mode="after")
    def _ordered_window(self):
        if not self.t_start < self.t_end:
            raise ValueError(f"generator window [{self.t_start}, {self.t_end}] is empty")
        return self


def transient(cfg, t):
    return cfg.y_end + (cfg.y_start - cfg.y_end) * np.exp(-(t - cfg.t_start) / cfg.time_constant)


def two_tone(t):
    return np.sin(2.0 * t) + 0.5 * np.sin(4.0 * t + 1.0)


def generate_dataset(cfg, seed=0):
    t = np.linspace(cfg.t_start, cfg.t_end, cfg.n, endpoint=cfg.endpoint)
    y = transient(cfg, t) if cfg.kind is GeneratorKind.TRANSIENT else two_tone(t)
    if cfg.noise_std > 0.0:
        y = y + np.random.default_rng(seed).normal(0.0, cfg.noise_std, size=t.size)
    logging.info(f"Generated {cfg.n} {cfg.kind.value} samples on [{cfg.t_start}, {cfg.t_end}] (noise std {cfg.noise_std})")
    return Dataset(t=t, y=y, role=DatasetRole.HYPERPARAMETER_TRAINING)
