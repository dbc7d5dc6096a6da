# training/periodic.py

"""
Constrained training for periodic references.

Instead of sampling constraints pointwise, the horizon [0, T_s k_bar] is cut
into eta equal intervals and the posterior mean is held to interval bounds:

    [m_min, m_max] over the horizon              inside X
    [mdot_min_i, mdot_max_i] over interval i     inside [tau_lower_i, tau_upper_i]

Extrema come from a grid of spacing delta widened by a Lipschitz slack L delta / 2,
so a reported bound never understates the true one. Once the horizon covers a
period the bounds hold for all time.
"""

import logging
import math
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from checks.reachability import (
    TrackabilityReport,
    ViolationKind,
    check_trackable,
    interval_distance,
    tube_growth_bounds,
)
from gp.kernels import KernelFamily, KernelSpec, MeanSpec, kernel_dt_sup, kernel_dtt_sup
from gp.posterior import build_posterior, posterior_mean, posterior_mean_dt
from training.hyperopt import OptimizerConfig, minimize_penalized
from utils.errors import PreconditionError, UnsupportedOperationError

PERIODICITY_TOLERANCE = 1e-9
PERIODICITY_SAMPLES = 1000


class PeriodicTrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    k_bar: int = Field(ge=1)
    eta: int = Field(16, ge=1)
    grid_resolution: Optional[float] = Field(None, gt=0.0)
    optimizer: OptimizerConfig = OptimizerConfig()

    def resolution(self, sys):
        """Grid spacing delta; defaults to a tenth of the sampling time."""
        return self.grid_resolution if self.grid_resolution is not None else sys.sampling_time / 10.0


class IntervalRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    index: int
    t_start: float
    t_end: float
    region_lo: float
    region_hi: float
    deriv_min: float
    deriv_max: float
    tau_lower: float
    tau_upper: float
    violation: float

    def as_row(self):
        return self.model_dump()


class IntervalBounds(BaseModel):
    model_config = ConfigDict(frozen=True)

    mean_min: float
    mean_max: float
    intervals: tuple[IntervalRecord, ...]
    state_violation: float
    certified: bool = True
    certification_slack: float = 0.0

    @model_validator(mode="after")
    def _ordered(self):
        if self.mean_min > self.mean_max:
            raise ValueError("mean_min must not exceed mean_max")
        for row in self.intervals:
            if row.deriv_min > row.deriv_max:
                raise ValueError(f"interval {row.index}: deriv_min exceeds deriv_max")
        return self

    @property
    def max_violation(self):
        return max([self.state_violation] + [row.violation for row in self.intervals])


# --- Certified extrema ---

def _grid(t_lo, t_hi, delta):
    if not t_lo < t_hi:
        raise PreconditionError(f"extrema interval [{t_lo}, {t_hi}] is empty")
    if not delta > 0.0:
        raise PreconditionError(f"grid resolution must be positive, got {delta}")
    return np.linspace(t_lo, t_hi, int(math.ceil((t_hi - t_lo) / delta)) + 1)


def _certified(values, lipschitz, delta):
    slack = lipschitz * delta / 2.0
    return float(np.min(values) - slack), float(np.max(values) + slack), float(slack)


def certified_mean_extrema(P, t_lo, t_hi, delta):
    """(lower bound on min m+, upper bound on max m+, slack) over [t_lo, t_hi]."""
    grid = _grid(t_lo, t_hi, delta)
    lipschitz = float(np.abs(P.coefficients) @ kernel_dt_sup(P.spec, P.theta, P.data.t, t_lo, t_hi))
    return _certified(posterior_mean(P, grid), lipschitz, delta)


def certified_derivative_extrema(P, t_lo, t_hi, delta):
    grid = _grid(t_lo, t_hi, delta)
    lipschitz = float(np.abs(P.coefficients) @ kernel_dtt_sup(P.spec, P.theta, P.data.t, t_lo, t_hi))
    return _certified(posterior_mean_dt(P, grid), lipschitz, delta)


# --- Interval constraints ---

def interval_edges(sys, k_bar, eta):
    return sys.sampling_time * k_bar * np.arange(eta + 1) / eta


def assess_intervals(P, sys, cfg, tube_table=None, margin=0.0):
    """Certified bounds of the candidate posterior and their violations in state units.

    Interval i looks one sampling step back so that steps crossing an interval
    boundary start inside the region its rates were computed for. Interval 0
    looks back into negative time, which for a periodic mean is the end of the
    previous period.
    """
    delta = cfg.resolution(sys)
    T_s = sys.sampling_time
    edges = interval_edges(sys, cfg.k_bar, cfg.eta)

    m_lo, m_hi, slack = certified_mean_extrema(P, 0.0, float(edges[-1]), delta)
    state_violation = max(
        float(interval_distance(m_lo, sys.x_lo + margin, sys.x_hi - margin)),
        float(interval_distance(m_hi, sys.x_lo + margin, sys.x_hi - margin)),
    )

    rows = []
    for i in range(cfg.eta):
        t_start, t_end = float(edges[i]), float(edges[i + 1])
        r_lo, r_hi, r_slack = certified_mean_extrema(P, t_start - T_s, t_end, delta)
        region = (min(max(r_lo, sys.x_lo), sys.x_hi), min(max(r_hi, sys.x_lo), sys.x_hi))
        tube = tube_growth_bounds(sys, region, tube_table)
        d_lo, d_hi, d_slack = certified_derivative_extrema(P, t_start, t_end, delta)
        violation = T_s * max(tube.lower_rate - d_lo, d_hi - tube.upper_rate, -margin / T_s) + margin
        rows.append(IntervalRecord(
            index=i, t_start=t_start, t_end=t_end, region_lo=region[0], region_hi=region[1],
            deriv_min=d_lo, deriv_max=d_hi, tau_lower=tube.lower_rate, tau_upper=tube.upper_rate,
            violation=max(violation, 0.0),
        ))
        slack = max(slack, r_slack, d_slack)

    return IntervalBounds(
        mean_min=m_lo, mean_max=m_hi, intervals=tuple(rows),
        state_violation=state_violation, certified=True, certification_slack=slack,
    )


def _short_horizon_violation(horizon, period):
    return 1.0 + (period - horizon) / horizon


def train_periodic(sys, data, cfg, spec=None, mean=None, tube_table=None):
    """Returns (TrainOutcome, IntervalBounds of theta_hat)."""
    spec = spec or KernelSpec(family=KernelFamily.PERIODIC)
    mean = mean or MeanSpec()
    if spec.family is not KernelFamily.PERIODIC:
        raise UnsupportedOperationError(f"periodic training needs the periodic kernel, got {spec.family.value}")
    horizon = sys.sampling_time * cfg.k_bar

    def violation_fn(theta, P, margin):
        # the horizon must cover a whole period
        if horizon < theta.theta3:
            return _short_horizon_violation(horizon, theta.theta3)
        return assess_intervals(P, sys, cfg, tube_table, margin).max_violation

    outcome = minimize_penalized(spec, mean, data, cfg.optimizer, violation_fn, constraint_horizon=cfg.k_bar)
    P = build_posterior(spec, mean, outcome.theta_hat, data)
    bounds = assess_intervals(P, sys, cfg, tube_table)

    worst = max(bounds.intervals, key=lambda row: (row.violation, -row.index))
    logging.info(
        f"periodic fit: period={outcome.theta_hat.theta3:.6g} horizon={horizon:.6g} "
        f"mean range=[{bounds.mean_min:.4g}, {bounds.mean_max:.4g}] state violation={bounds.state_violation:.3e} "
        f"worst interval {worst.index} violation={worst.violation:.3e} slack={bounds.certification_slack:.3e}"
    )
    return outcome, bounds


def certify_periodic(outcome, sys, posterior, n_periods, sample_count=PERIODICITY_SAMPLES):
    """Checks the posterior mean repeats with period theta3, then replays n_periods of it through check_trackable."""
    if not outcome.feasible:
        raise PreconditionError("only a feasible outcome can be certified")
    if n_periods < 1:
        raise PreconditionError(f"n_periods must be >= 1, got {n_periods}")

    period = posterior.theta.theta3
    times = np.linspace(0.0, n_periods * period, sample_count)
    shifted = posterior_mean(posterior, times + period)
    base = posterior_mean(posterior, times)
    gaps = np.abs(shifted - base)
    scale = max(1.0, float(np.max(np.abs(base))))
    if float(np.max(gaps)) > PERIODICITY_TOLERANCE * scale:
        index = int(np.argmax(gaps))
        note = f"FAIL: m+(t + {period:.6g}) differs from m+(t) by {gaps[index]:.3e} at t = {times[index]:.6g}."
        logging.error(note)
        return TrackabilityReport(
            trackable=False, first_violation_index=index, violation_kind=ViolationKind.NOT_PERIODIC, note=note,
        )

    steps = int(math.ceil(n_periods * period / sys.sampling_time))
    report = check_trackable(sys, posterior_mean(posterior, sys.sampling_time * np.arange(steps + 1)))
    logging.info(f"periodic replay over {n_periods} periods ({steps} steps): {report.note}")
    return report
