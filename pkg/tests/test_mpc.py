# tests/test_mpc.py

import numpy as np
import pytest

from checks.reachability import LinearSystem1D
from controller.closed_loop import simulate_closed_loop
from controller.mpc import (
    TERMINAL_TOLERANCE, MPCConfig, OCPStatus, feasibility_intervals, reference_input, solve_ocp,
)
from gp.kernels import Hyperparameters, KernelSpec, MeanSpec
from gp.posterior import Dataset, build_posterior, posterior_mean
from utils.errors import PreconditionError


@pytest.fixture
def sys_fast():
    return LinearSystem1D(a=0.9, b=0.5, x_lo=-2.0, x_hi=0.05, u_lo=-0.5, u_hi=0.5, sampling_time=0.1)


@pytest.fixture
def decaying_posterior():
    theta = Hyperparameters(values=(1.0, 0.55), noise_variance=1e-4)
    return build_posterior(KernelSpec(), MeanSpec(), theta, Dataset(t=[0.0], y=[-0.5]))


def test_reference_input_examples(transient_system, periodic_system):
    np.testing.assert_array_equal(reference_input(transient_system, np.zeros(5)), np.zeros(4))
    assert reference_input(transient_system, [0.0, 0.05])[0] == pytest.approx(0.1)
    with pytest.raises(PreconditionError):
        reference_input(periodic_system, [0.0])


def test_single_step_is_deadbeat():
    sys = LinearSystem1D(a=0.9, b=0.5, x_lo=-100.0, x_hi=100.0, u_lo=-100.0, u_hi=100.0, sampling_time=1.0)
    solution = solve_ocp(sys, 1.0, [0.0, 0.3], [0.0], MPCConfig(horizon=1, state_weight=1.0, input_weight=0.0))
    assert solution.status is OCPStatus.OPTIMAL
    assert solution.first_input == pytest.approx((0.3 - 0.9) / 0.5)
    assert solution.states[-1] == pytest.approx(0.3)


def test_staying_on_reference_is_optimal(sys_fast):
    x_ref = np.full(11, -0.5)
    u_ref = reference_input(sys_fast, x_ref)
    solution = solve_ocp(sys_fast, -0.5, x_ref, u_ref, MPCConfig(horizon=10))
    assert solution.feasible
    np.testing.assert_allclose(solution.inputs, u_ref, atol=1e-9)
    assert solution.cost < 1e-12


def test_distant_start_is_infeasible(sys_fast):
    # from -2 two steps reach at most -1.145
    solution = solve_ocp(sys_fast, -2.0, np.zeros(3), np.zeros(2), MPCConfig(horizon=2))
    assert solution.status is OCPStatus.INFEASIBLE
    assert solution.first_input is None


def test_feasibility_intervals_shrink_to_terminal_band(sys_fast):
    intervals = feasibility_intervals(sys_fast, np.zeros(4))
    lo, hi = intervals[-1]
    assert hi - lo == pytest.approx(2 * TERMINAL_TOLERANCE)
    for interval in intervals:
        assert interval[0] <= 0.0 <= interval[1]
    # one step back from [-1e-6, 1e-6] is |0.9 x| <= 0.25 + 1e-6, cut by X
    assert intervals[-2][0] == pytest.approx(-(0.25 + TERMINAL_TOLERANCE) / 0.9)
    assert intervals[-2][1] == pytest.approx(0.05)


def test_solution_replays_exactly(sys_fast):
    x_ref = np.linspace(-1.0, -0.2, 11)
    u_ref = reference_input(sys_fast, x_ref)
    solution = solve_ocp(sys_fast, -0.8, x_ref, u_ref, MPCConfig(horizon=10))
    assert solution.feasible
    for k, u in enumerate(solution.inputs):
        assert sys_fast.u_lo <= u <= sys_fast.u_hi
        assert solution.states[k + 1] == sys_fast.step(solution.states[k], u)
    assert abs(solution.states[-1] - x_ref[-1]) <= TERMINAL_TOLERANCE + 1e-9


def test_window_length_is_checked(sys_fast):
    with pytest.raises(PreconditionError):
        solve_ocp(sys_fast, 0.0, np.zeros(4), np.zeros(3), MPCConfig(horizon=5))


def test_closed_loop_on_reference(sys_fast, decaying_posterior):
    x0 = posterior_mean(decaying_posterior, 0.0)
    trace = simulate_closed_loop(sys_fast, decaying_posterior, x0, 100, MPCConfig(horizon=10))
    assert trace.completed
    assert trace.max_error <= 1e-4
    for row, x_next in zip(trace.rows, trace.states[1:]):
        assert sys_fast.step(row.x, row.u) == x_next


def test_closed_loop_converges_from_off_reference(sys_fast, decaying_posterior):
    trace = simulate_closed_loop(sys_fast, decaying_posterior, -1.0, 100, MPCConfig(horizon=10))
    assert trace.completed
    errors = [row.error for row in trace.rows]
    assert errors[0] == pytest.approx(1.0 - 0.5 / (1.0 + 1e-4))
    assert errors[-1] <= 1e-3
    assert abs(trace.final_state - posterior_mean(decaying_posterior, 10.0)) <= 1e-3


def test_closed_loop_truncates_on_infeasibility(sys_fast, decaying_posterior):
    trace = simulate_closed_loop(sys_fast, decaying_posterior, -2.0, 20, MPCConfig(horizon=2))
    assert trace.status is OCPStatus.INFEASIBLE
    assert not trace.completed
    assert len(trace.rows) == 1
    assert not trace.rows[0].feasible


def test_untrackable_reference_is_a_precondition_error(sys_fast):
    theta = Hyperparameters(values=(1.0, 0.55), noise_variance=1e-4)
    P = build_posterior(KernelSpec(), MeanSpec(), theta, Dataset(t=[0.0], y=[1.0]))
    with pytest.raises(PreconditionError):
        simulate_closed_loop(sys_fast, P, 0.0, 50, MPCConfig(horizon=10))


def test_every_step_stays_feasible_on_a_trackable_reference(sys_fast, decaying_posterior):
    for x0 in (posterior_mean(decaying_posterior, 0.0), -1.0):
        trace = simulate_closed_loop(sys_fast, decaying_posterior, x0, 300, MPCConfig(horizon=10))
        assert trace.completed
        assert all(row.feasible for row in trace.rows)
        for row in trace.rows:
            assert sys_fast.u_lo <= row.u <= sys_fast.u_hi
        assert all(sys_fast.x_lo <= x <= sys_fast.x_hi for x in trace.states)


def _closed_loop_cost(trace, cfg):
    return sum(cfg.state_weight * (row.x - row.x_ref) ** 2 + cfg.input_weight * (row.u - row.u_ref) ** 2
               for row in trace.rows)


def test_doubling_the_input_grid_barely_moves_the_cost(sys_fast, decaying_posterior):
    coarse = MPCConfig(horizon=10, input_grid_size=41)
    fine = coarse.model_copy(update={"input_grid_size": 81})
    costs = [
        _closed_loop_cost(simulate_closed_loop(sys_fast, decaying_posterior, -1.0, 60, cfg), cfg)
        for cfg in (coarse, fine)
    ]
    assert costs[0] > 0.0
    assert abs(costs[1] - costs[0]) <= 0.01 * costs[0]
