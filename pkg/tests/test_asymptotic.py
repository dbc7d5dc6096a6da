# tests/test_asymptotic.py

import numpy as np
import pytest
from pydantic import ValidationError

from checks.reachability import LinearSystem1D, TubeGrowth, ViolationKind
from gp.kernels import Hyperparameters, KernelFamily, KernelSpec, MeanSpec
from gp.posterior import Dataset, build_posterior, mean_bound
from training.asymptotic import AsymptoticCertificate, AsymptoticTrainConfig, certify_all_time, train_asymptotic
from training.hyperopt import OptimizerConfig
from utils.errors import InfeasibleTrainingError, NonTerminationError, PreconditionError, UnsupportedOperationError

# theta fixed at (1.0, 0.55); only the constraint horizon moves
FIXED = OptimizerConfig(theta_bounds=((1.0, 1.0), (0.55, 0.55)), noise_variance=1e-4, multistart_count=1)


@pytest.fixture
def sys_fast():
    return LinearSystem1D(a=0.9, b=0.5, x_lo=-2.0, x_hi=2.0, u_lo=-0.5, u_hi=0.5, sampling_time=0.1)


def _config(**kwargs):
    return AsymptoticTrainConfig(**{"k_bar_init": 1, "k_bar_max": 50, "optimizer": FIXED, **kwargs})


def test_terminates_once_data_is_separated(sys_fast):
    cert = train_asymptotic(sys_fast, Dataset(t=[0.0], y=[0.0]), _config())
    # T_s k_bar must exceed theta2 = 0.55
    assert cert.k_bar_final == 6
    assert [r.k_bar for r in cert.trace] == [1, 2, 3, 4, 5, 6]
    assert not any(r.separation_ok for r in cert.trace[:-1])
    assert cert.trace[-1].certified
    assert cert.tube.sustains_constant


def test_stride_skips_ahead(sys_fast):
    cert = train_asymptotic(sys_fast, Dataset(t=[0.0], y=[0.0]), _config(k_bar_stride=4))
    assert cert.k_bar_final == 9
    assert [r.k_bar for r in cert.trace] == [1, 5, 9]


def test_decaying_reference_is_certified_and_replays(sys_fast):
    data = Dataset(t=[0.0], y=[-0.5])
    cert = train_asymptotic(sys_fast, data, _config())
    assert cert.k_bar_final == 6
    assert cert.derivative_ok and cert.state_box_ok and cert.separation_ok
    assert cert.tube.lower_rate <= 0.0 <= cert.tube.upper_rate

    P = build_posterior(KernelSpec(), MeanSpec(), cert.theta_hat, data)
    report = certify_all_time(cert, sys_fast, P, horizon_steps=200)
    assert report.trackable

    # beyond t_bar the envelope only shrinks
    tail = mean_bound(P, sys_fast.sampling_time * np.arange(cert.k_bar_final, 200))
    assert np.all(np.diff(tail) <= 0.0)
    assert tail[0] == pytest.approx(cert.mean_bound_at_k_bar)


def test_infeasible_start_reports_k_bar_init():
    sys = LinearSystem1D(a=0.9, b=0.5, x_lo=-2.0, x_hi=-1.0, u_lo=-0.5, u_hi=0.5, sampling_time=0.1)
    with pytest.raises(InfeasibleTrainingError) as excinfo:
        train_asymptotic(sys, Dataset(t=[0.0], y=[0.0]), _config(k_bar_init=3))
    assert excinfo.value.k_bar == 3
    assert excinfo.value.outcome is not None
    assert not excinfo.value.outcome.feasible


def test_non_termination_keeps_the_trace(sys_fast):
    with pytest.raises(NonTerminationError) as excinfo:
        train_asymptotic(sys_fast, Dataset(t=[0.0], y=[0.0]), _config(k_bar_max=3))
    assert [r.k_bar for r in excinfo.value.trace] == [1, 2, 3]


def test_periodic_kernel_is_rejected(sys_fast):
    with pytest.raises(UnsupportedOperationError):
        train_asymptotic(sys_fast, Dataset(t=[0.0], y=[0.0]), _config(),
                         spec=KernelSpec(family=KernelFamily.PERIODIC))


def test_data_must_end_before_first_horizon(sys_fast):
    with pytest.raises(PreconditionError):
        train_asymptotic(sys_fast, Dataset(t=[0.0, 0.2], y=[0.0, 0.0]), _config(k_bar_init=2))


def test_config_rejects_cap_below_start():
    with pytest.raises(ValidationError):
        AsymptoticTrainConfig(k_bar_init=10, k_bar_max=5)


def test_certificate_without_derivative_check_is_caught_by_replay():
    # ones on t = 0..10, then the mean falls back to 0 faster than |u| <= 0.05 allows
    sys = LinearSystem1D(a=1.0, b=1.0, x_lo=-5.0, x_hi=5.0, u_lo=-0.05, u_hi=0.05, sampling_time=1.0)
    theta = Hyperparameters(values=(1.0, 1.0), noise_variance=1e-4)
    P = build_posterior(KernelSpec(), MeanSpec(), theta, Dataset(t=np.arange(11.0), y=np.ones(11)))
    cert = AsymptoticCertificate(
        k_bar_final=12, theta_hat=theta, mean_at_t_bar=0.0, mean_bound_at_k_bar=0.0, mean_dt_bound_at_k_bar=0.0,
        tube=TubeGrowth(lower_rate=-0.05, upper_rate=0.05, domain=(-5.0, 5.0)),
        separation_ok=True, state_box_ok=True, derivative_ok=False, derivative_check_enforced=False,
    )
    report = certify_all_time(cert, sys, P, horizon_steps=120)
    assert not report.trackable
    assert report.violation_kind is ViolationKind.NO_ADMISSIBLE_INPUT
    assert report.first_violation_index >= 10


def test_enforced_certificate_requires_derivative_check():
    with pytest.raises(ValidationError):
        AsymptoticCertificate(
            k_bar_final=1, theta_hat=Hyperparameters(values=(1.0, 1.0)), mean_at_t_bar=0.0,
            mean_bound_at_k_bar=0.0, mean_dt_bound_at_k_bar=0.0,
            tube=TubeGrowth(lower_rate=-1.0, upper_rate=1.0, domain=(0.0, 0.0)),
            separation_ok=True, state_box_ok=True, derivative_ok=False,
        )


def test_replay_must_cover_ten_times_k_bar(sys_fast):
    data = Dataset(t=[0.0], y=[-0.5])
    cert = train_asymptotic(sys_fast, data, _config())
    P = build_posterior(KernelSpec(), MeanSpec(), cert.theta_hat, data)
    with pytest.raises(PreconditionError):
        certify_all_time(cert, sys_fast, P, horizon_steps=10 * cert.k_bar_final - 1)
    assert certify_all_time(cert, sys_fast, P, horizon_steps=10 * cert.k_bar_final).trackable
