# controller/closed_loop.py

import logging
from dataclasses import dataclass, field

import numpy as np

from checks.reachability import check_trackable
from controller.mpc import OCPStatus, reference_input, solve_ocp
from gp.posterior import posterior_mean
from utils.errors import PreconditionError


@dataclass(frozen=True)
class TraceRow:
    k: int
    t: float
    x: float
    u: float
    x_ref: float
    u_ref: float
    error: float
    feasible: bool

    def as_row(self):
        return {
            "k": self.k, "t": self.t, "x": self.x, "u": self.u, "x_ref": self.x_ref,
            "u_ref": self.u_ref, "error": self.error, "feasible": int(self.feasible),
        }


@dataclass(frozen=True)
class ClosedLoopTrace:
    rows: tuple = ()
    final_state: float = float("nan")
    status: OCPStatus = OCPStatus.OPTIMAL
    steps_requested: int = 0
    states: tuple = field(default=(), repr=False)

    @property
    def completed(self):
        return self.status is OCPStatus.OPTIMAL and len(self.rows) == self.steps_requested

    @property
    def max_error(self):
        errors = [row.error for row in self.rows]
        return max(errors) if errors else 0.0


def simulate_closed_loop(sys, posterior, x0, steps, cfg):
    """Receding-horizon tracking of the posterior mean sampled at T_s.

    The reference must be trackable over steps + N samples; the trace is cut
    at the first infeasible OCP.
    """
    if steps < 1:
        raise PreconditionError(f"steps must be >= 1, got {steps}")
    N = cfg.horizon
    x_ref = np.atleast_1d(posterior_mean(posterior, sys.sampling_time * np.arange(steps + N + 1)))
    report = check_trackable(sys, x_ref)
    if not report.trackable:
        raise PreconditionError(f"reference is not trackable over {steps + N} steps: {report.note}")
    u_ref = reference_input(sys, x_ref)

    x = float(x0)
    rows, states = [], [x]
    status = OCPStatus.OPTIMAL
    for k in range(steps):
        t = sys.sampling_time * k
        solution = solve_ocp(sys, x, x_ref[k:k + N + 1], u_ref[k:k + N], cfg)
        if not solution.feasible:
            status = solution.status
            logging.error(f"OCP infeasible at k={k} (x={x:.6g}, x_ref={x_ref[k]:.6g}); trace truncated")
            rows.append(TraceRow(k, t, x, float("nan"), float(x_ref[k]), float(u_ref[k]), abs(x - x_ref[k]), False))
            break
        u = solution.first_input
        rows.append(TraceRow(k, t, x, u, float(x_ref[k]), float(u_ref[k]), abs(x - x_ref[k]), True))
        x = sys.step(x, u)
        states.append(x)

    trace = ClosedLoopTrace(rows=tuple(rows), final_state=x, status=status, steps_requested=steps,
                            states=tuple(states))
    logging.info(f"closed loop: {len(rows)}/{steps} steps, status={status.value}, max error={trace.max_error:.3e}")
    return trace
