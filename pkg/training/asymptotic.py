# training/asymptotic.py

"""
Iterative constrained training for references that settle to a constant.

Starting from k_bar_init, each iteration fits the hyperparameters under the
pointwise trackability constraints on k = 0..k_bar and then asks whether the
constraints extend to all later samples:

    separation   every data time is further than zeta(theta) from t_bar = T_s k_bar
    state box    the hull of m+(t_bar) +- m_bar(t_bar) and m +- m_bar(t_bar) lies in X
    derivative   m_dot+(t_bar) +- mdot_bar(t_bar) and +-mdot_bar(t_bar) lie in [tau_lower, tau_upper]
                 computed over that hull

When all three hold the bounds can only shrink beyond t_bar and the reference
is trackable for every k. Otherwise k_bar grows and the fit is repeated.
"""

import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from checks.reachability import TubeGrowth, check_trackable, tube_growth_bounds
from gp.kernels import Hyperparameters, KernelFamily, KernelSpec, MeanSpec, monotonicity_threshold
from gp.posterior import build_posterior, mean_bound, mean_dt_bound, posterior_mean, posterior_mean_dt
from training.hyperopt import ConstraintSet, OptimizerConfig, TrainOutcome, minimize_nlml_constrained, warm_start_vector
from utils.errors import (
    InfeasibleTrainingError,
    NonTerminationError,
    PreconditionError,
    UnsupportedOperationError,
)

REPLAY_FACTOR = 10


class AsymptoticTrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    k_bar_init: int = Field(ge=1)
    k_bar_max: int = Field(ge=1)
    k_bar_stride: int = Field(1, ge=1)
    optimizer: OptimizerConfig = OptimizerConfig()

    @model_validator(mode="after")
    def _cap_above_start(self):
        if self.k_bar_max < self.k_bar_init:
            raise ValueError(f"k_bar_max ({self.k_bar_max}) must be >= k_bar_init ({self.k_bar_init})")
        return self


class IterationRecord(BaseModel):
    """One pass of the outer loop; the iteration-trace CSV has one row per record."""

    model_config = ConfigDict(frozen=True)

    k_bar: int
    theta: tuple[float, ...]
    noise_variance: float
    nlml: float
    mean_at_t_bar: float
    mean_bound: float
    mean_dt: float
    mean_dt_bound: float
    tau_lower: float = float("nan")
    tau_upper: float = float("nan")
    separation_ok: bool
    state_box_ok: bool
    tube_nonempty: bool
    derivative_ok: bool

    @property
    def certified(self):
        return self.separation_ok and self.state_box_ok and self.derivative_ok

    def as_row(self):
        row = {"k_bar": self.k_bar}
        for idx, value in enumerate(self.theta):
            row[f"theta{idx + 1}"] = value
        row.update({
            "noise_variance": self.noise_variance,
            "nlml": self.nlml,
            "mean": self.mean_at_t_bar,
            "mean_bound": self.mean_bound,
            "mean_dt": self.mean_dt,
            "mean_dt_bound": self.mean_dt_bound,
            "tau_lower": self.tau_lower,
            "tau_upper": self.tau_upper,
            "separation_ok": int(self.separation_ok),
            "state_box_ok": int(self.state_box_ok),
            "tube_nonempty": int(self.tube_nonempty),
            "derivative_ok": int(self.derivative_ok),
        })
        return row


class AsymptoticCertificate(BaseModel):
    model_config = ConfigDict(frozen=True)

    k_bar_final: int
    theta_hat: Hyperparameters
    mean_at_t_bar: float
    mean_bound_at_k_bar: float
    mean_dt_bound_at_k_bar: float
    tube: TubeGrowth
    separation_ok: bool
    state_box_ok: bool
    derivative_ok: bool
    derivative_check_enforced: bool = True
    outcome: Optional[TrainOutcome] = None
    trace: tuple[IterationRecord, ...] = ()

    @model_validator(mode="after")
    def _checks_hold(self):
        if not (self.separation_ok and self.state_box_ok):
            raise ValueError("a certificate requires the separation and state box checks to hold")
        if self.derivative_check_enforced and not self.derivative_ok:
            raise ValueError("a certificate requires the derivative check to hold")
        return self


def _tube_region(P, t_bar):
    """Hull of the posterior-centred and prior-centred intervals at t_bar."""
    m = posterior_mean(P, t_bar)
    bound = mean_bound(P, t_bar)
    prior = P.mean.constant_value
    return m, bound, (min(m, prior) - bound, max(m, prior) + bound)


def assess_iteration(sys, P, k_bar, outcome=None, tube_table=None):
    t_bar = sys.sampling_time * k_bar
    zeta = monotonicity_threshold(P.spec, P.theta)
    separation_ok = bool(np.all(np.abs(P.data.t - t_bar) > zeta))

    m, bound, region = _tube_region(P, t_bar)
    m_dt = posterior_mean_dt(P, t_bar)
    dt_bound = mean_dt_bound(P, t_bar)
    state_box_ok = sys.x_lo <= region[0] and region[1] <= sys.x_hi

    tube = None
    tube_nonempty = derivative_ok = False
    if state_box_ok:
        tube = tube_growth_bounds(sys, region, tube_table)
        tube_nonempty = not tube.is_empty
        derivative_ok = tube.contains(m_dt - dt_bound, m_dt + dt_bound) and tube.contains(-dt_bound, dt_bound)

    record = IterationRecord(
        k_bar=k_bar,
        theta=P.theta.values,
        noise_variance=P.theta.noise_variance,
        nlml=outcome.nlml_value if outcome is not None else float("nan"),
        mean_at_t_bar=m,
        mean_bound=bound,
        mean_dt=m_dt,
        mean_dt_bound=dt_bound,
        tau_lower=tube.lower_rate if tube is not None else float("nan"),
        tau_upper=tube.upper_rate if tube is not None else float("nan"),
        separation_ok=separation_ok,
        state_box_ok=state_box_ok,
        tube_nonempty=tube_nonempty,
        derivative_ok=derivative_ok,
    )
    return record, tube


def train_asymptotic(sys, data, cfg, spec=None, mean=None, tube_table=None, enforce_derivative_check=True):
    spec = spec or KernelSpec(family=KernelFamily.SQUARED_EXPONENTIAL)
    mean = mean or MeanSpec()
    if spec.family is not KernelFamily.SQUARED_EXPONENTIAL:
        raise UnsupportedOperationError(f"asymptotic training needs the squared exponential kernel, got {spec.family.value}")
    first_t_bar = sys.sampling_time * cfg.k_bar_init
    if float(np.max(data.t)) >= first_t_bar:
        raise PreconditionError(
            f"data must end before T_s * k_bar_init = {first_t_bar:.6g}, last time is {float(np.max(data.t)):.6g}"
        )

    optimizer = cfg.optimizer
    trace = []
    k_bar = cfg.k_bar_init
    while k_bar <= cfg.k_bar_max:
        outcome = minimize_nlml_constrained(spec, mean, data, ConstraintSet(k_bar=k_bar, system=sys), optimizer)
        if not outcome.feasible:
            raise InfeasibleTrainingError(k_bar, outcome, trace)

        P = build_posterior(spec, mean, outcome.theta_hat, data)
        record, tube = assess_iteration(sys, P, k_bar, outcome, tube_table)
        trace.append(record)
        logging.info(
            f"k_bar={k_bar}: m_bar={record.mean_bound:.4g} mdot_bar={record.mean_dt_bound:.4g} "
            f"tau=[{record.tau_lower:.4g}, {record.tau_upper:.4g}] separation={record.separation_ok} "
            f"state_box={record.state_box_ok} tube_nonempty={record.tube_nonempty} derivative={record.derivative_ok}"
        )

        # skipping the derivative check is a test hook; such certificates are not sound
        derivative_ok = record.derivative_ok or (not enforce_derivative_check and record.tube_nonempty)
        if record.separation_ok and record.state_box_ok and derivative_ok:
            return AsymptoticCertificate(
                k_bar_final=k_bar,
                theta_hat=outcome.theta_hat,
                mean_at_t_bar=record.mean_at_t_bar,
                mean_bound_at_k_bar=record.mean_bound,
                mean_dt_bound_at_k_bar=record.mean_dt_bound,
                tube=tube,
                separation_ok=True,
                state_box_ok=True,
                derivative_ok=record.derivative_ok,
                derivative_check_enforced=enforce_derivative_check,
                outcome=outcome,
                trace=tuple(trace),
            )

        warm = warm_start_vector(spec, optimizer, outcome.theta_hat)
        optimizer = optimizer.model_copy(update={"warm_start": warm})
        k_bar += cfg.k_bar_stride

    raise NonTerminationError(cfg.k_bar_max, trace)


def certify_all_time(cert, sys, posterior, horizon_steps):
    """Replays the certified reference over k = 0..horizon_steps through check_trackable.

    The replay must reach at least REPLAY_FACTOR * k_bar_final steps.
    """
    minimum = REPLAY_FACTOR * cert.k_bar_final
    if horizon_steps < minimum:
        raise PreconditionError(f"horizon_steps must be >= {REPLAY_FACTOR} * k_bar_final = {minimum}, got {horizon_steps}")
    times = sys.sampling_time * np.arange(horizon_steps + 1)
    report = check_trackable(sys, posterior_mean(posterior, times))
    if report.trackable:
        logging.info(f"certificate at k_bar={cert.k_bar_final} replayed over {horizon_steps} steps")
    else:
        logging.error(f"certificate at k_bar={cert.k_bar_final} failed its replay: {report.note}")
    return report
