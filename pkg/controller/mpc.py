# controller/mpc.py

"""
Tracking MPC with a terminal equality constraint for the scalar system.

The finite-horizon problem

    min  sum_{j<N} q (x_j - x_r(j))^2 + r (u_j - u_r(j))^2
    s.t. x_{j+1} = a x_j + b u_j,  x_j in X,  u_j in U,  |x_N - x_r(N)| <= 1e-6

is solved by dynamic programming. Backward feasibility intervals F_j hold
every state from which the terminal equality is still reachable; the value
function is tabulated on a state grid over each F_j and the forward pass
picks inputs from a grid that is refined twice around the incumbent.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from checks.reachability import BOX_TOLERANCE, reference_inputs
from utils.errors import PreconditionError

TERMINAL_TOLERANCE = 1e-6
REFINEMENTS = 2


class MPCConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    horizon: int = Field(10, ge=1)
    state_weight: float = Field(1.0, gt=0.0)
    input_weight: float = Field(0.1, ge=0.0)
    input_grid_size: int = Field(41, ge=3)
    state_grid_size: int = Field(101, ge=3)
    terminal_equality: bool = True


class OCPStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class OCPSolution:
    status: OCPStatus
    inputs: tuple = ()
    states: tuple = ()
    cost: float = float("inf")

    @property
    def feasible(self):
        return self.status is OCPStatus.OPTIMAL

    @property
    def first_input(self):
        return self.inputs[0] if self.inputs else None


def reference_input(sys, x_r):
    """u_r(k) = (x_r(k+1) - a x_r(k)) / b, unclipped."""
    x_r = np.asarray(x_r, dtype=float).ravel()
    if x_r.size < 2:
        raise PreconditionError("reference_input needs at least two reference samples")
    return reference_inputs(sys, x_r)


# --- Feasibility intervals ---

def _preimage(sys, lo, hi):
    """States x in X with a x + b u in [lo, hi] for some u in U, as (lo, hi) or None."""
    bu_lo, bu_hi = sys.input_image
    ax_lo, ax_hi = lo - bu_hi, hi - bu_lo
    if sys.a == 0.0:
        return (sys.x_lo, sys.x_hi) if ax_lo <= 0.0 <= ax_hi else None
    ends = sorted((ax_lo / sys.a, ax_hi / sys.a))
    x_lo, x_hi = max(ends[0], sys.x_lo), min(ends[1], sys.x_hi)
    return (x_lo, x_hi) if x_lo <= x_hi + BOX_TOLERANCE else None


def feasibility_intervals(sys, x_ref, terminal_equality=True):
    """F_0..F_N; None from the first stage where the terminal set is unreachable."""
    N = len(x_ref) - 1
    if terminal_equality:
        terminal = (max(x_ref[N] - TERMINAL_TOLERANCE, sys.x_lo), min(x_ref[N] + TERMINAL_TOLERANCE, sys.x_hi))
        if terminal[0] > terminal[1]:
            return [None] * (N + 1)
    else:
        terminal = (sys.x_lo, sys.x_hi)
    intervals = [None] * (N + 1)
    intervals[N] = terminal
    for j in range(N - 1, -1, -1):
        if intervals[j + 1] is None:
            break
        intervals[j] = _preimage(sys, *intervals[j + 1])
    return intervals


def _admissible_inputs(sys, x, target):
    """Input interval steering x into target = (lo, hi), intersected with U. Broadcasts over x."""
    lo = (target[0] - sys.a * x) / sys.b
    hi = (target[1] - sys.a * x) / sys.b
    u_lo, u_hi = np.minimum(lo, hi), np.maximum(lo, hi)
    return np.maximum(u_lo, sys.u_lo), np.minimum(u_hi, sys.u_hi)


# --- Dynamic programming ---

def _state_grid(interval, x_ref, size):
    lo, hi = interval
    grid = np.linspace(lo, hi, size)
    if lo <= x_ref <= hi:
        grid = np.union1d(grid, [x_ref])
    return grid


class _Stage:
    """Tabulated value function, linearly interpolated between grid states."""

    def __init__(self, grid, values):
        self.grid = grid
        self.values = values

    def __call__(self, x):
        if self.grid.size == 1:
            return np.full(np.shape(x), self.values[0])
        return np.interp(x, self.grid, self.values)


def _stage_cost(cfg, x, x_r, u, u_r):
    return cfg.state_weight * (x - x_r) ** 2 + cfg.input_weight * (u - u_r) ** 2


def _last_inputs(sys, xs, x_ref, u_ref, target, cfg):
    """Final-stage input: deadbeat onto x_r(N) under the terminal equality, otherwise u_r(N-1); clipped into the admissible interval."""
    u_lo, u_hi = _admissible_inputs(sys, xs, target)
    wanted = (x_ref[-1] - sys.a * xs) / sys.b if cfg.terminal_equality else np.full(np.shape(xs), u_ref[-1])
    return np.clip(wanted, u_lo, np.maximum(u_lo, u_hi))


def _best_inputs(sys, xs, j, x_ref, u_ref, target, next_stage, cfg):
    """Minimises stage cost plus V_{j+1} over a refined input grid, independently for every state in xs."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    rows = np.arange(xs.size)
    u_lo, u_hi = _admissible_inputs(sys, xs, target)
    collapsed = u_lo > u_hi
    mid = 0.5 * (u_lo + u_hi)
    u_lo, u_hi = np.where(collapsed, mid, u_lo), np.where(collapsed, mid, u_hi)

    # the reference input and the input landing on x_r(j+1) are always tried
    extras = np.stack([np.full(xs.shape, u_ref[j]), (x_ref[j + 1] - sys.a * xs) / sys.b], axis=1)
    inside = (extras >= u_lo[:, None]) & (extras <= u_hi[:, None])
    extras = np.where(inside, extras, np.nan)

    steps = np.linspace(0.0, 1.0, cfg.input_grid_size)
    lo, hi = u_lo, u_hi
    best_u = np.full(xs.shape, np.nan)
    best_cost = np.full(xs.shape, np.inf)
    for _ in range(REFINEMENTS + 1):
        grid = lo[:, None] + steps[None, :] * (hi - lo)[:, None]
        candidates = np.concatenate([grid, extras], axis=1)
        x_next = np.clip(sys.a * xs[:, None] + sys.b * candidates, target[0], target[1])
        costs = _stage_cost(cfg, xs[:, None], x_ref[j], candidates, u_ref[j]) + next_stage(x_next)
        costs = np.where(np.isnan(candidates), np.inf, costs)
        idx = np.argmin(costs, axis=1)
        better = costs[rows, idx] < best_cost
        best_u = np.where(better, candidates[rows, idx], best_u)
        best_cost = np.where(better, costs[rows, idx], best_cost)

        spacing = (hi - lo) / (cfg.input_grid_size - 1)
        lo, hi = np.maximum(best_u - spacing, u_lo), np.minimum(best_u + spacing, u_hi)
    return best_u, best_cost


def _backward(sys, x_ref, u_ref, intervals, cfg):
    """Value functions V_1..V_{N-1} tabulated on state grids (index j holds V_j)."""
    N = len(u_ref)
    stages = [None] * N
    for j in range(N - 1, 0, -1):
        grid = _state_grid(intervals[j], x_ref[j], cfg.state_grid_size)
        target = intervals[j + 1]
        if j == N - 1:
            values = _stage_cost(cfg, grid, x_ref[j], _last_inputs(sys, grid, x_ref, u_ref, target, cfg), u_ref[j])
        else:
            _, values = _best_inputs(sys, grid, j, x_ref, u_ref, target, stages[j + 1], cfg)
        stages[j] = _Stage(grid, values)
    return stages


def solve_ocp(sys, x0, x_ref, u_ref, cfg):
    """Solves the tracking OCP from x0 over the window x_ref (N+1 samples) and u_ref (N samples)."""
    x_ref = np.asarray(x_ref, dtype=float).ravel()
    u_ref = np.asarray(u_ref, dtype=float).ravel()
    N = cfg.horizon
    if x_ref.size != N + 1 or u_ref.size != N:
        raise PreconditionError(
            f"reference window must hold {N + 1} states and {N} inputs, got {x_ref.size} and {u_ref.size}"
        )

    intervals = feasibility_intervals(sys, x_ref, cfg.terminal_equality)
    F0 = intervals[0]
    if F0 is None or not (F0[0] - BOX_TOLERANCE <= x0 <= F0[1] + BOX_TOLERANCE):
        logging.debug(f"x0={x0:.6g} lies outside the feasible set {F0}")
        return OCPSolution(status=OCPStatus.INFEASIBLE)

    stages = _backward(sys, x_ref, u_ref, intervals, cfg)
    x = float(x0)
    states, inputs, total = [float(x0)], [], 0.0
    for j in range(N):
        target = intervals[j + 1]
        if j == N - 1:
            u = float(_last_inputs(sys, x, x_ref, u_ref, target, cfg))
        else:
            best, _ = _best_inputs(sys, x, j, x_ref, u_ref, target, stages[j + 1], cfg)
            u = float(best[0])
        total += float(_stage_cost(cfg, x, x_ref[j], u, u_ref[j]))
        x = sys.step(x, u)
        inputs.append(u)
        states.append(x)

    if cfg.terminal_equality and abs(x - x_ref[N]) > TERMINAL_TOLERANCE + BOX_TOLERANCE:
        logging.debug(f"terminal state {x:.9g} misses x_r(N)={x_ref[N]:.9g}")
        return OCPSolution(status=OCPStatus.INFEASIBLE)
    return OCPSolution(status=OCPStatus.OPTIMAL, inputs=tuple(inputs), states=tuple(states), cost=total)
