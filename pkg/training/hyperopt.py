# training/hyperopt.py

"""
Hyperparameter estimation by NLML minimisation.

The search runs in log space (positivity for free), optionally wrapped in an
exterior quadratic penalty for the trackability constraints:

    minimise  l(theta) + rho * v(theta)^2,   rho <- rho * growth until v <= tolerance

where v is a non-negative constraint violation in state units. Each start of
the multistart is an independent Nelder-Mead search; starts are merged by
(NLML, start index) among feasible candidates, or by (violation, start index)
when none is feasible.

Each start keeps the lowest-NLML feasible point it has visited and falls back
to it when the penalty iterates drift out of the feasible set. A start that
never sees a feasible point finishes with a search on v alone.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import optimize

from checks.reachability import LinearSystem1D, interval_distance, one_step_reachable
from gp.kernels import Hyperparameters
from gp.posterior import build_posterior, posterior_mean, posterior_nlml
from utils.errors import ConfigurationError, OptimizationError, TrackingGPError

DEFAULT_THETA_BOUNDS = (1e-3, 1e3)


def _check_box(box, name):
    lo, hi = box
    if not (0.0 < lo <= hi and math.isfinite(hi)):
        raise ValueError(f"{name} must satisfy 0 < lo <= hi < inf, got ({lo}, {hi})")
    return box


class OptimizerConfig(BaseModel):
    """Search settings. Boxes are given in natural units; the search itself runs on their logarithms.

    A theta box with lo == hi fixes that parameter. noise_variance=None makes the
    noise variance a free decision variable inside noise_bounds.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    multistart_count: int = Field(4, ge=1)
    theta_bounds: Optional[tuple[tuple[float, float], ...]] = None
    initial_theta_box: Optional[tuple[tuple[float, float], ...]] = None
    noise_variance: Optional[float] = Field(1e-4, ge=0.0)
    noise_bounds: tuple[float, float] = (1e-8, 1.0)
    penalty_initial: float = Field(10.0, gt=0.0)
    penalty_growth: float = Field(10.0, gt=1.0)
    max_outer_iterations: int = Field(8, ge=1)
    constraint_tolerance: float = Field(1e-6, gt=0.0)
    constraint_margin: float = Field(0.0, ge=0.0)
    inner_solver_tolerance: float = Field(1e-8, gt=0.0)
    max_inner_iterations: int = Field(2000, ge=1)
    rng_seed: int = 0
    workers: int = Field(1, ge=1)
    warm_start: Optional[tuple[float, ...]] = None

    @field_validator("theta_bounds", "initial_theta_box")
    @classmethod
    def _valid_boxes(cls, boxes):
        if boxes is not None:
            for idx, box in enumerate(boxes):
                _check_box(box, f"theta{idx + 1} box")
        return boxes

    @field_validator("noise_bounds")
    @classmethod
    def _valid_noise_box(cls, box):
        return _check_box(box, "noise box")


class ConstraintSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    k_bar: int = Field(ge=0)
    system: LinearSystem1D


class TrainOutcome(BaseModel):
    model_config = ConfigDict(frozen=True)

    theta_hat: Hyperparameters
    nlml_value: float
    feasible: bool
    max_violation: float = Field(ge=0.0)
    iterations: int
    constraint_tolerance: float = 1e-6
    constraint_horizon: Optional[int] = None
    start_index: int = 0

    @model_validator(mode="after")
    def _feasible_within_tolerance(self):
        if self.feasible and self.max_violation > self.constraint_tolerance:
            raise ValueError("a feasible outcome must have max_violation <= constraint_tolerance")
        return self


# --- Decision vector ---

class SearchSpace:
    """Maps the free log-space decision vector to Hyperparameters."""

    def __init__(self, spec, config):
        n = spec.parameter_count
        theta_bounds = config.theta_bounds or (DEFAULT_THETA_BOUNDS,) * n
        if len(theta_bounds) != n:
            raise ConfigurationError(f"{spec.family.value} kernel needs {n} theta boxes, got {len(theta_bounds)}")
        initial_box = config.initial_theta_box or theta_bounds
        if len(initial_box) != n:
            raise ConfigurationError(f"initial theta box needs {n} entries, got {len(initial_box)}")

        boxes = list(theta_bounds)
        starts = list(initial_box)
        self.noise_free = config.noise_variance is None
        if self.noise_free:
            boxes.append(config.noise_bounds)
            starts.append(config.noise_bounds)

        self.n_theta = n
        self.fixed_noise = config.noise_variance
        self.log_bounds = np.log(np.asarray(boxes, dtype=float))
        self.log_starts = np.log(np.asarray(starts, dtype=float))
        self.free = self.log_bounds[:, 0] < self.log_bounds[:, 1]

    @property
    def free_bounds(self):
        return [tuple(b) for b in self.log_bounds[self.free]]

    def full_vector(self, z_free):
        z = self.log_bounds[:, 0].copy()
        z[self.free] = np.clip(z_free, self.log_bounds[self.free, 0], self.log_bounds[self.free, 1])
        return z

    def decode(self, z_free):
        z = self.full_vector(z_free)
        noise = math.exp(z[self.n_theta]) if self.noise_free else self.fixed_noise
        return Hyperparameters.from_log(z[: self.n_theta], noise_variance=noise)

    def encode(self, theta):
        z = list(np.log(theta.values))
        if self.noise_free:
            z.append(math.log(max(theta.noise_variance, np.finfo(float).tiny)))
        return np.asarray(z)[self.free]

    def starts(self, count, seed, warm_start=None):
        rng = np.random.default_rng(seed)
        lo, hi = self.log_starts[self.free, 0], self.log_starts[self.free, 1]
        starts = [rng.uniform(lo, hi) for _ in range(count)]
        if warm_start is not None and len(warm_start) == int(self.free.sum()):
            starts[0] = np.clip(np.asarray(warm_start, dtype=float), self.log_bounds[self.free, 0],
                                self.log_bounds[self.free, 1])
        return starts


# --- Pointwise trackability constraint ---

def pointwise_violation(P, constraints, margin=0.0):
    """max over k of the distance of m+(T_s k) outside X plus its distance outside the tube from m+(T_s (k-1)).

    A positive margin shrinks every box by that amount (constraint tightening).
    """
    sys = constraints.system
    times = sys.sampling_time * np.arange(constraints.k_bar + 1)
    x_r = np.atleast_1d(posterior_mean(P, times))
    per_step = interval_distance(x_r, sys.x_lo + margin, sys.x_hi - margin)
    if x_r.size > 1:
        lo, hi = one_step_reachable(sys, x_r[:-1])
        per_step[1:] += interval_distance(x_r[1:], lo + margin, hi - margin)
    return float(np.max(per_step))


def constraint_violation(spec, mean, theta, data, constraints):
    P = build_posterior(spec, mean, theta, data)
    return pointwise_violation(P, constraints)


# --- Penalty search ---

@dataclass(frozen=True)
class _Candidate:
    index: int
    z: np.ndarray
    nlml: float
    violation: float
    iterations: int


class _FeasibleRecord:
    """Lowest-NLML point a single start has visited within the constraint tolerance."""

    def __init__(self, tolerance):
        self.tolerance = tolerance
        self.nlml = np.inf
        self.z = None

    def offer(self, z_free, cost, violation):
        if violation <= self.tolerance and cost < self.nlml:
            self.nlml = cost
            self.z = np.array(z_free, dtype=float)

    @property
    def found(self):
        return self.z is not None


def _evaluate(space, spec, mean, data, violation_fn, z_free, margin=0.0):
    theta = space.decode(z_free)
    P = build_posterior(spec, mean, theta, data)
    cost = posterior_nlml(P)
    violation = violation_fn(theta, P, margin) if violation_fn is not None else 0.0
    return cost, violation


def _penalised(space, spec, mean, data, violation_fn, rho, margin, record=None):
    def objective(z_free):
        try:
            cost, violation = _evaluate(space, spec, mean, data, violation_fn, z_free, margin)
        except TrackingGPError:
            return np.inf
        if record is not None and math.isfinite(cost):
            record.offer(z_free, cost, violation)
        value = cost + rho * violation ** 2
        return value if math.isfinite(value) else np.inf
    return objective


def _violation_only(space, spec, mean, data, violation_fn, margin, record):
    def objective(z_free):
        try:
            cost, violation = _evaluate(space, spec, mean, data, violation_fn, z_free, margin)
        except TrackingGPError:
            return np.inf
        if math.isfinite(cost):
            record.offer(z_free, cost, violation)
        return violation if math.isfinite(violation) else np.inf
    return objective


def _run_start(index, z0, space, spec, mean, data, violation_fn, config):
    z = np.asarray(z0, dtype=float)
    rho = config.penalty_initial
    iterations = 0
    constrained = violation_fn is not None
    rounds = config.max_outer_iterations if constrained else 1
    options = {
        "xatol": config.inner_solver_tolerance,
        "fatol": config.inner_solver_tolerance,
        "maxiter": config.max_inner_iterations,
    }
    # the margin only tightens the boxes, so a point recorded here is feasible without it too
    record = _FeasibleRecord(config.constraint_tolerance) if constrained else None

    for _ in range(rounds):
        if z.size:
            objective = _penalised(space, spec, mean, data, violation_fn, rho, config.constraint_margin, record)
            objective(z)
            result = optimize.minimize(objective, z, method="Nelder-Mead", bounds=space.free_bounds, options=options)
            iterations += int(result.nit)
            if np.isfinite(result.fun):
                z = np.asarray(result.x, dtype=float)
        try:
            cost, violation = _evaluate(space, spec, mean, data, violation_fn, z)
        except TrackingGPError as e:
            logging.debug(f"start {index}: posterior failed at the search result: {e}")
            cost, violation = np.inf, np.inf
            break
        if violation <= config.constraint_tolerance:
            break
        rho *= config.penalty_growth

    if constrained and not record.found and z.size and math.isfinite(cost):
        objective = _violation_only(space, spec, mean, data, violation_fn, config.constraint_margin, record)
        result = optimize.minimize(objective, z, method="Nelder-Mead", bounds=space.free_bounds, options=options)
        iterations += int(result.nit)
        logging.debug(f"start {index}: violation-only search reached {result.fun:.3e}")

    if constrained and record.found and (violation > config.constraint_tolerance or record.nlml < cost):
        z = record.z
        cost, violation = _evaluate(space, spec, mean, data, violation_fn, z)

    logging.debug(f"start {index}: nlml={cost:.6g} violation={violation:.3e} iterations={iterations}")
    return _Candidate(index, z, cost, violation, iterations)


def minimize_penalized(spec, mean, data, config, violation_fn=None, constraint_horizon=None):
    """Multistart penalty search shared by the pointwise and the interval trainers.

    violation_fn(theta, posterior, margin) -> float >= 0; None means unconstrained.
    """
    space = SearchSpace(spec, config)
    starts = space.starts(config.multistart_count, config.rng_seed, config.warm_start)

    def run(item):
        index, z0 = item
        return _run_start(index, z0, space, spec, mean, data, violation_fn, config)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            candidates = list(pool.map(run, enumerate(starts)))
    else:
        candidates = [run(item) for item in enumerate(starts)]

    finite = [c for c in candidates if math.isfinite(c.nlml)]
    if not finite:
        raise OptimizationError(f"none of the {len(starts)} starts produced a finite NLML")

    feasible = [c for c in finite if c.violation <= config.constraint_tolerance]
    if feasible:
        best = min(feasible, key=lambda c: (c.nlml, c.index))
    else:
        best = min(finite, key=lambda c: (c.violation, c.index))
        logging.warning(f"no feasible start: best violation {best.violation:.3e} (start {best.index})")

    theta_hat = space.decode(best.z)
    logging.info(
        f"theta_hat={tuple(round(v, 6) for v in theta_hat.values)} noise={theta_hat.noise_variance:.3e} "
        f"nlml={best.nlml:.6g} violation={best.violation:.3e} start={best.index}"
    )
    return TrainOutcome(
        theta_hat=theta_hat,
        nlml_value=best.nlml,
        feasible=bool(feasible),
        max_violation=0.0 if violation_fn is None else best.violation,
        iterations=sum(c.iterations for c in candidates),
        constraint_tolerance=config.constraint_tolerance,
        constraint_horizon=constraint_horizon,
        start_index=best.index,
    )


def minimize_nlml(spec, mean, data, config):
    return minimize_penalized(spec, mean, data, config)


def minimize_nlml_constrained(spec, mean, data, constraints, config):
    def violation_fn(theta, P, margin):
        return pointwise_violation(P, constraints, margin)

    return minimize_penalized(spec, mean, data, config, violation_fn, constraint_horizon=constraints.k_bar)


def warm_start_vector(spec, config, theta):
    """Free log-space vector for `theta`, usable as OptimizerConfig.warm_start."""
    return tuple(float(v) for v in SearchSpace(spec, config).encode(theta))
