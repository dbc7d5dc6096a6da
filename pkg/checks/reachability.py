# checks/reachability.py

"""
One-step reachability and the trackability check for scalar linear systems

    x(k+1) = a x(k) + b u(k),   x in [x_lo, x_hi],   u in [u_lo, u_hi].

A reference x_r is trackable if every sample lies in the state box and every
step x_r(k) -> x_r(k+1) is produced by an admissible input. Tube growth rates
are signed: a reference changing at a rate inside [tau_lower, tau_upper]
stays inside the one-step reachable tube while its state lies in the domain
the rates were computed for.
"""

import logging
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from utils.errors import DomainError, PreconditionError

BOX_TOLERANCE = 1e-9


class LinearSystem1D(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    a: float
    b: float
    x_lo: float
    x_hi: float
    u_lo: float
    u_hi: float
    sampling_time: float

    @model_validator(mode="after")
    def _check_boxes(self):
        if self.b == 0.0:
            raise ValueError("input coefficient b must be non-zero")
        if not self.x_lo < self.x_hi:
            raise ValueError(f"state box is empty or degenerate: [{self.x_lo}, {self.x_hi}]")
        # a single admissible input (u_lo == u_hi) is allowed
        if not self.u_lo <= self.u_hi:
            raise ValueError(f"input box is empty: [{self.u_lo}, {self.u_hi}]")
        if not self.sampling_time > 0.0:
            raise ValueError(f"sampling_time must be positive, got {self.sampling_time}")
        return self

    @property
    def state_box(self):
        return (self.x_lo, self.x_hi)

    @property
    def input_box(self):
        return (self.u_lo, self.u_hi)

    @property
    def input_image(self):
        """The set {b u : u in U} as an interval."""
        ends = (self.b * self.u_lo, self.b * self.u_hi)
        return (min(ends), max(ends))

    def step(self, x, u):
        return self.a * x + self.b * u


def interval_distance(value, lo, hi):
    """Distance of value outside [lo, hi]; zero inside. Broadcasts."""
    value = np.asarray(value, dtype=float)
    return np.maximum(np.maximum(lo - value, value - hi), 0.0)


def one_step_reachable(sys, x):
    bu_lo, bu_hi = sys.input_image
    ax = sys.a * np.asarray(x, dtype=float)
    lo, hi = ax + bu_lo, ax + bu_hi
    if np.ndim(lo) == 0:
        return (float(lo), float(hi))
    return (lo, hi)


class TubeGrowth(BaseModel):
    model_config = ConfigDict(frozen=True)

    lower_rate: float
    upper_rate: float
    domain: tuple[float, float]

    @property
    def is_empty(self):
        return self.lower_rate > self.upper_rate

    @property
    def sustains_constant(self):
        return self.lower_rate <= 0.0 <= self.upper_rate

    def contains(self, rate_lo, rate_hi):
        return (not self.is_empty) and self.lower_rate <= rate_lo and rate_hi <= self.upper_rate


def _check_domain(sys, domain):
    lo, hi = domain
    if lo > hi:
        raise DomainError(f"tube domain [{lo}, {hi}] is empty")
    if lo < sys.x_lo - BOX_TOLERANCE or hi > sys.x_hi + BOX_TOLERANCE:
        raise DomainError(f"tube domain [{lo:.6g}, {hi:.6g}] is not inside the state box [{sys.x_lo}, {sys.x_hi}]")


def tube_growth_bounds(sys, domain, table=None):
    """Constant inner approximation of the one-step tube growth over the state region `domain`.

    Both rates are affine in x, so their extrema over the interval sit at its endpoints.
    """
    _check_domain(sys, domain)
    if table is not None:
        return table.bounds(domain)

    ends = np.asarray(domain, dtype=float)
    bu_lo, bu_hi = sys.input_image
    drift = (sys.a - 1.0) * ends
    lower = np.max(drift + bu_lo) / sys.sampling_time
    upper = np.min(drift + bu_hi) / sys.sampling_time
    return TubeGrowth(lower_rate=float(lower), upper_rate=float(upper), domain=(float(ends[0]), float(ends[1])))


class TubeRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    interval_start: float
    interval_end: float
    tau_lower: float
    tau_upper: float

    @model_validator(mode="after")
    def _ordered(self):
        if self.interval_start > self.interval_end:
            raise ValueError(f"tube row interval [{self.interval_start}, {self.interval_end}] is reversed")
        return self


class TubeTable(BaseModel):
    """User-supplied tube growth rates keyed by state interval, for systems without an exact tube."""

    model_config = ConfigDict(frozen=True)

    rows: tuple[TubeRow, ...]

    def bounds(self, domain):
        lo, hi = domain
        hits = sorted((r for r in self.rows if r.interval_start <= hi and r.interval_end >= lo),
                      key=lambda r: r.interval_start)
        covered = lo
        for row in hits:
            if row.interval_start > covered:
                break
            covered = max(covered, row.interval_end)
        if not hits or covered < hi:
            raise DomainError(f"tube table does not cover the state region [{lo:.6g}, {hi:.6g}]")
        return TubeGrowth(
            lower_rate=max(r.tau_lower for r in hits),
            upper_rate=min(r.tau_upper for r in hits),
            domain=(float(lo), float(hi)),
        )


class ViolationKind(str, Enum):
    STATE_CONSTRAINT = "state_constraint"
    NO_ADMISSIBLE_INPUT = "no_admissible_input"
    NOT_PERIODIC = "not_periodic"


class TrackabilityReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    trackable: bool
    first_violation_index: Optional[int] = None
    violation_kind: Optional[ViolationKind] = None
    reference_inputs: tuple[float, ...] = ()
    steps_checked: int = 0
    note: str = ""

    @model_validator(mode="after")
    def _consistent(self):
        if self.trackable and self.first_violation_index is not None:
            raise ValueError("a trackable report cannot carry a violation index")
        return self


def reference_inputs(sys, x_r):
    x_r = np.asarray(x_r, dtype=float)
    return (x_r[1:] - sys.a * x_r[:-1]) / sys.b


def _first(mask):
    hits = np.flatnonzero(mask)
    return int(hits[0]) if hits.size else None


def check_trackable(sys, x_r):
    x_r = np.asarray(x_r, dtype=float).ravel()
    if x_r.size < 2:
        raise PreconditionError("a trackability check needs at least two reference samples")

    u_r = reference_inputs(sys, x_r)
    state_idx = _first(interval_distance(x_r, sys.x_lo, sys.x_hi) > BOX_TOLERANCE)
    input_idx = _first(interval_distance(u_r, sys.u_lo, sys.u_hi) > BOX_TOLERANCE)
    inputs = tuple(float(u) for u in u_r)

    if state_idx is None and input_idx is None:
        return TrackabilityReport(
            trackable=True, reference_inputs=inputs, steps_checked=int(x_r.size),
            note=f"PASS: all {x_r.size} samples lie in X and every step has an admissible input.",
        )

    # at equal index the state violation is reported first
    if input_idx is None or (state_idx is not None and state_idx <= input_idx):
        index, kind = state_idx, ViolationKind.STATE_CONSTRAINT
        note = f"FAIL: x_r({index}) = {x_r[index]:.6g} lies outside X = [{sys.x_lo}, {sys.x_hi}]."
    else:
        index, kind = input_idx, ViolationKind.NO_ADMISSIBLE_INPUT
        note = (f"FAIL: step {index} -> {index + 1} needs u = {u_r[index]:.6g}, "
                f"outside U = [{sys.u_lo}, {sys.u_hi}].")

    logging.debug(note)
    return TrackabilityReport(
        trackable=False, first_violation_index=index, violation_kind=kind,
        reference_inputs=inputs, steps_checked=int(x_r.size), note=note,
    )
