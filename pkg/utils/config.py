# utils/config.py

"""
Experiment configuration files.

The format is a flat list of `key = value` lines with dotted section keys:

    # Example: transient reference
    system.a = 0.9
    kernel.family = squared_exponential
    kernel.theta2 = 1e-2..10      # a range leaves the parameter free
    kernel.noise_variance = 1e-4  # a single number fixes it
    mode = asymptotic

Blank lines and `#` comments are ignored. Duplicate keys and keys no section
knows about are rejected with their line number.
"""

import logging
import math
import os
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from checks.reachability import LinearSystem1D
from controller.mpc import MPCConfig
from gp.kernels import KernelFamily, KernelSpec, MeanSpec
from training.asymptotic import REPLAY_FACTOR, AsymptoticTrainConfig
from training.hyperopt import DEFAULT_THETA_BOUNDS, OptimizerConfig
from training.periodic import PeriodicTrainConfig
from utils.errors import ConfigurationError
from utils.generator import GeneratorConfig

RANGE_SEPARATOR = ".."


class TrainingMode(str, Enum):
    ASYMPTOTIC = "asymptotic"
    PERIODIC = "periodic"
    UNCONSTRAINED = "unconstrained"


def _as_box(value):
    """A number fixes the parameter (lo == hi); a (lo, hi) range leaves it free."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (float(value), float(value))
    return value


class KernelSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    family: KernelFamily = KernelFamily.SQUARED_EXPONENTIAL
    theta1: tuple[float, float] = DEFAULT_THETA_BOUNDS
    theta2: tuple[float, float] = DEFAULT_THETA_BOUNDS
    theta3: tuple[float, float] = DEFAULT_THETA_BOUNDS
    noise_variance: tuple[float, float] = (1e-4, 1e-4)

    @field_validator("theta1", "theta2", "theta3", "noise_variance", mode="before")
    @classmethod
    def _boxes(cls, value):
        return _as_box(value)

    @field_validator("theta1", "theta2", "theta3")
    @classmethod
    def _positive(cls, box):
        lo, hi = box
        if not (0.0 < lo <= hi and math.isfinite(hi)):
            raise ValueError(f"theta box must satisfy 0 < lo <= hi, got {lo}..{hi}")
        return box

    @field_validator("noise_variance")
    @classmethod
    def _noise(cls, box):
        lo, hi = box
        if lo < 0.0 or lo > hi or (lo < hi and lo == 0.0):
            raise ValueError(f"noise_variance must be >= 0, and a free range must start above 0; got {lo}..{hi}")
        return box

    @property
    def spec(self):
        return KernelSpec(family=self.family)

    @property
    def theta_bounds(self):
        boxes = (self.theta1, self.theta2, self.theta3)
        return boxes[: self.spec.parameter_count]


class OptimizerSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    multistart_count: int = Field(4, ge=1)
    penalty_initial: float = Field(10.0, gt=0.0)
    penalty_growth: float = Field(10.0, gt=1.0)
    max_outer_iterations: int = Field(8, ge=1)
    constraint_tolerance: float = Field(1e-6, gt=0.0)
    constraint_margin: float = Field(0.0, ge=0.0)
    inner_solver_tolerance: float = Field(1e-8, gt=0.0)
    max_inner_iterations: int = Field(2000, ge=1)
    workers: int = Field(1, ge=1)


class AsymptoticSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    k_bar_init: int = Field(70, ge=1)
    k_bar_max: int = Field(400, ge=1)
    k_bar_stride: int = Field(1, ge=1)
    horizon_factor: int = Field(10, ge=REPLAY_FACTOR)


class PeriodicSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    k_bar: int = Field(40, ge=1)
    eta: int = Field(16, ge=1)
    grid_resolution: Optional[float] = Field(None, gt=0.0)
    periods: int = Field(5, ge=1)


class PredictionSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    horizon_steps: int = Field(200, ge=1)


class SimulationSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    steps: int = Field(500, ge=1)
    x0: Optional[float] = None


class TubeSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    table: Optional[str] = None


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    system: LinearSystem1D
    kernel: KernelSection = KernelSection()
    mean: MeanSpec = MeanSpec()
    mode: TrainingMode = TrainingMode.UNCONSTRAINED
    asymptotic: AsymptoticSection = AsymptoticSection()
    periodic: PeriodicSection = PeriodicSection()
    optimizer: OptimizerSection = OptimizerSection()
    prediction: PredictionSection = PredictionSection()
    generator: GeneratorConfig = GeneratorConfig()
    mpc: MPCConfig = MPCConfig()
    simulate: SimulationSection = SimulationSection()
    tube: TubeSection = TubeSection()
    rng_seed: int = 0
    output_dir: str = "reports"

    @model_validator(mode="after")
    def _mode_matches_kernel(self):
        if self.mode is TrainingMode.ASYMPTOTIC and self.kernel.family is not KernelFamily.SQUARED_EXPONENTIAL:
            raise ValueError("mode = asymptotic needs kernel.family = squared_exponential")
        if self.mode is TrainingMode.PERIODIC and self.kernel.family is not KernelFamily.PERIODIC:
            raise ValueError("mode = periodic needs kernel.family = periodic")
        return self

    def optimizer_config(self):
        lo, hi = self.kernel.noise_variance
        noise = {"noise_variance": lo} if lo == hi else {"noise_variance": None, "noise_bounds": (lo, hi)}
        return OptimizerConfig(
            theta_bounds=self.kernel.theta_bounds,
            rng_seed=self.rng_seed,
            **noise,
            **self.optimizer.model_dump(),
        )

    def asymptotic_config(self):
        return AsymptoticTrainConfig(
            k_bar_init=self.asymptotic.k_bar_init,
            k_bar_max=self.asymptotic.k_bar_max,
            k_bar_stride=self.asymptotic.k_bar_stride,
            optimizer=self.optimizer_config(),
        )

    def periodic_config(self):
        return PeriodicTrainConfig(
            k_bar=self.periodic.k_bar,
            eta=self.periodic.eta,
            grid_resolution=self.periodic.grid_resolution,
            optimizer=self.optimizer_config(),
        )


# --- Parsing ---

def parse_value(raw):
    text = raw.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if RANGE_SEPARATOR in text:
        lo, _, hi = text.partition(RANGE_SEPARATOR)
        try:
            return (float(lo), float(hi))
        except ValueError:
            return text
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_config_text(text):
    """Returns ({dotted key: value}, {dotted key: line number})."""
    values, lines = {}, {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        key, sep, raw = content.partition("=")
        key = key.strip()
        if not sep or not key or not raw.strip():
            raise ConfigurationError(f"line {line_number}: expected 'key = value', got {line.strip()!r}")
        if key in values:
            raise ConfigurationError(f"line {line_number}: duplicate key '{key}' (first set on line {lines[key]})")
        values[key] = parse_value(raw)
        lines[key] = line_number
    return values, lines


def _nest(values, lines):
    nested = {}
    for key, value in values.items():
        *sections, leaf = key.split(".")
        node = nested
        for section in sections:
            child = node.setdefault(section, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"line {lines[key]}: '{key}' nests under the value key '{section}'")
            node = child
        if isinstance(node.get(leaf), dict):
            raise ConfigurationError(f"line {lines[key]}: '{key}' is a section, not a value")
        node[leaf] = value
    return nested


def _describe(error, lines):
    messages = []
    for item in error.errors():
        loc = ".".join(str(part) for part in item["loc"])
        line = next((lines[k] for k in sorted(lines, key=len, reverse=True) if loc == k or loc.startswith(k + ".")), None)
        prefix = f"line {line}: " if line is not None else ""
        messages.append(f"{prefix}{loc}: {item['msg']}")
    return "; ".join(messages)


def build_config(values, lines=None, seed_override=None):
    lines = lines or {}
    if seed_override is not None:
        values = {**values, "rng_seed": seed_override}
    try:
        return ExperimentConfig.model_validate(_nest(values, lines))
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration: {_describe(e, lines)}") from e


def load_config(path, seed_override=None):
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        values, lines = parse_config_text(f.read())
    config = build_config(values, lines, seed_override)

    # a relative tube table is resolved next to the config file
    if config.tube.table and not os.path.isabs(config.tube.table):
        table = os.path.join(os.path.dirname(os.path.abspath(path)), config.tube.table)
        config = config.model_copy(update={"tube": TubeSection(table=table)})
    logging.info(f"Loaded {config.mode.value} experiment config from {path} (seed {config.rng_seed})")
    return config
