# tests/test_posterior.py

import math
import typing

import numpy as np
import pytest

from gp.kernels import Hyperparameters, KernelFamily, KernelSpec, MeanSpec, eval_kernel
from gp.posterior import (
    Dataset, DatasetRole, GPPosterior, build_posterior, gram_matrix, mean_bound, mean_dt_bound, nlml, posterior_mean,
    posterior_mean_dt, posterior_nlml, posterior_variance, predict,
)
from utils.errors import DataError

LN_2PI = math.log(2.0 * math.pi)


def _dense_oracle(spec, mean, theta, data, t_star):
    """Explicit inverse and determinant, independent of the Cholesky path."""
    K = np.array([[eval_kernel(spec, theta, a, b) for b in data.t] for a in data.t]) + theta.noise_variance * np.eye(len(data))
    k_star = np.array([[eval_kernel(spec, theta, s, ti) for ti in data.t] for s in t_star])
    K_inv = np.linalg.inv(K)
    r = data.y - mean.constant_value
    m = mean.constant_value + k_star @ K_inv @ r
    v = theta.theta1 ** 2 - np.einsum("ij,jk,ik->i", k_star, K_inv, k_star)
    l = math.log(np.linalg.det(K)) + r @ K_inv @ r + len(data) * LN_2PI
    return m, v, l


def test_single_point_coefficients(se_spec, zero_mean):
    data = Dataset(t=[0.0], y=[2.0])
    P = build_posterior(se_spec, zero_mean, Hyperparameters(values=(1.0, 1.0)), data)
    np.testing.assert_allclose(P.coefficients, [2.0])
    P = build_posterior(se_spec, zero_mean, Hyperparameters(values=(1.0, 1.0), noise_variance=1.0), data)
    np.testing.assert_allclose(P.coefficients, [1.0])


def test_single_point_queries(se_spec, zero_mean, unit_theta):
    P = build_posterior(se_spec, zero_mean, unit_theta, Dataset(t=[0.0], y=[2.0]))
    expected = 2.0 * math.exp(-0.5)
    assert math.isclose(posterior_mean(P, 1.0), expected, rel_tol=1e-12)
    assert math.isclose(posterior_mean_dt(P, 1.0), -expected, rel_tol=1e-12)
    assert math.isclose(mean_bound(P, 1.0), expected, rel_tol=1e-12)
    assert math.isclose(mean_dt_bound(P, 1.0), expected, rel_tol=1e-12)
    assert mean_dt_bound(P, 0.0) == 0.0
    assert posterior_variance(P, 0.0) == pytest.approx(0.0, abs=1e-12)
    assert posterior_variance(P, 100.0) == pytest.approx(1.0)
    assert posterior_mean(P, 100.0) == pytest.approx(0.0, abs=1e-12)


def test_bound_ignores_coefficient_sign(se_spec, zero_mean, unit_theta):
    P = build_posterior(se_spec, zero_mean, unit_theta, Dataset(t=[0.0], y=[-2.0]))
    assert math.isclose(mean_bound(P, 1.0), 2.0 * math.exp(-0.5), rel_tol=1e-12)


def test_symmetric_data_has_flat_mean_at_centre(zero_mean, unit_theta, se_spec):
    # the dataset lives on t >= 0, so the symmetric pair is centred at 1
    P = build_posterior(se_spec, zero_mean, unit_theta, Dataset(t=[0.0, 2.0], y=[1.0, 1.0]))
    assert abs(posterior_mean_dt(P, 1.0)) < 1e-14
    assert abs(posterior_mean_dt(P, 60.0)) <= 1e-8


def test_nlml_closed_forms(se_spec, zero_mean):
    theta = Hyperparameters(values=(1.0, 1.0))
    assert math.isclose(nlml(se_spec, zero_mean, theta, Dataset(t=[0.0], y=[0.0])), LN_2PI, rel_tol=1e-14)
    assert math.isclose(nlml(se_spec, zero_mean, theta, Dataset(t=[0.0], y=[1.0])), 1.0 + LN_2PI, rel_tol=1e-14)


def _random_problem(rng, family, n, noise_lo=0.01):
    spec = KernelSpec(family=family)
    t = np.sort(rng.choice(np.linspace(0.0, 4.0, 41), size=n, replace=False))
    data = Dataset(t=t, y=rng.normal(size=n))
    values = tuple(rng.uniform(0.5, 1.5, size=spec.parameter_count))
    theta = Hyperparameters(values=values, noise_variance=rng.uniform(noise_lo, 0.2))
    mean = MeanSpec(constant_value=rng.normal())
    return spec, mean, theta, data


@pytest.mark.parametrize("family", [KernelFamily.SQUARED_EXPONENTIAL, KernelFamily.PERIODIC])
def test_matches_dense_oracle(family):
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(1, 7))
        spec, mean, theta, data = _random_problem(rng, family, n)
        P = build_posterior(spec, mean, theta, data)
        t_star = rng.uniform(0.0, 5.0, size=8)

        m, v, l = _dense_oracle(spec, mean, theta, data, t_star)
        np.testing.assert_allclose(posterior_mean(P, t_star), m, atol=1e-9)
        np.testing.assert_allclose(posterior_variance(P, t_star), v, atol=1e-9)
        assert math.isclose(posterior_nlml(P), l, abs_tol=1e-9)
        # weighted-sum form against the matrix form
        gram = gram_matrix(spec, theta, data.t) + theta.noise_variance * np.eye(n)
        np.testing.assert_allclose(gram @ P.coefficients, data.y - mean.constant_value, atol=1e-10)


def test_noise_free_interpolation(se_spec, zero_mean, random_dataset):
    P = build_posterior(se_spec, zero_mean, Hyperparameters(values=(1.0, 0.3)), random_dataset)
    np.testing.assert_allclose(posterior_mean(P, random_dataset.t), random_dataset.y, atol=1e-8)


def test_bounds_dominate_on_random_posteriors():
    rng = np.random.default_rng(3)
    families = [KernelFamily.SQUARED_EXPONENTIAL, KernelFamily.PERIODIC]
    for index in range(50):
        spec, mean, theta, data = _random_problem(rng, families[index % 2], int(rng.integers(1, 7)), noise_lo=1e-4)
        P = build_posterior(spec, mean, theta, data)
        ts = rng.uniform(0.0, 10.0, size=10000)

        m_bar = mean_bound(P, ts)
        m_dot_bar = mean_dt_bound(P, ts)
        assert np.all(m_bar >= np.abs(posterior_mean(P, ts) - mean.constant_value) - 1e-12 * (1.0 + m_bar))
        assert np.all(m_dot_bar >= np.abs(posterior_mean_dt(P, ts)) - 1e-12 * (1.0 + m_dot_bar))


def test_variance_in_range(se_spec, random_dataset):
    theta = Hyperparameters(values=(1.1, 0.4), noise_variance=1e-3)
    P = build_posterior(se_spec, MeanSpec(constant_value=0.4), theta, random_dataset)
    v = posterior_variance(P, np.random.default_rng(3).uniform(0.0, 8.0, size=10000))
    assert np.all((v >= 0.0) & (v <= theta.theta1 ** 2))


def test_mean_derivative_matches_finite_difference(se_spec, zero_mean, random_dataset):
    P = build_posterior(se_spec, zero_mean, Hyperparameters(values=(1.0, 0.5), noise_variance=1e-3), random_dataset)
    h = 1e-5
    for t in np.linspace(0.1, 4.0, 23):
        fd = (posterior_mean(P, t + h) - posterior_mean(P, t - h)) / (2 * h)
        assert math.isclose(posterior_mean_dt(P, t), fd, rel_tol=1e-6, abs_tol=1e-8)


def test_derivative_bound_decays_beyond_length_scale(se_spec, zero_mean, random_dataset):
    theta = Hyperparameters(values=(1.0, 0.3), noise_variance=1e-3)
    P = build_posterior(se_spec, zero_mean, theta, random_dataset)
    ts = np.linspace(random_dataset.t[-1] + 0.31, 10.0, 200)
    assert np.all(np.diff(mean_dt_bound(P, ts)) <= 0.0)


def test_singular_gram_is_regularised_with_jitter(se_spec, zero_mean):
    # at a 1e-9 lag the two Gram columns are identical in floating point
    P = build_posterior(se_spec, zero_mean, Hyperparameters(values=(1.0, 1.0)), Dataset(t=[0.0, 1e-9], y=[1.0, 1.0]))
    assert P.jitter > 0.0
    assert np.all(np.isfinite(P.coefficients))


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(t=[], y=[])
    with pytest.raises(DataError):
        Dataset(t=[-1.0, 0.0], y=[0.0, 0.0])
    with pytest.raises(DataError):
        Dataset(t=[1.0, 0.5], y=[0.0, 0.0])
    with pytest.raises(DataError):
        Dataset(t=[0.0, 1.0], y=[0.0])
    with pytest.raises(DataError):
        Dataset.from_points([(0.0, 1.0), (0.0, 2.0)])

    data = Dataset.from_points([(2.0, 1.0), (0.0, 3.0)])
    np.testing.assert_array_equal(data.t, [0.0, 2.0])
    np.testing.assert_array_equal(data.y, [3.0, 1.0])
    assert data.with_role(DatasetRole.PREDICTION_TRAINING).role is DatasetRole.PREDICTION_TRAINING


def test_predict_records(se_spec, zero_mean, unit_theta):
    P = build_posterior(se_spec, zero_mean, unit_theta, Dataset(t=[0.0], y=[2.0]))
    records = predict(P, [0.0, 1.0])
    assert [r.t for r in records] == [0.0, 1.0]
    assert math.isclose(records[1].mean, 2.0 * math.exp(-0.5), rel_tol=1e-12)
    for r in records:
        assert r.variance >= 0.0
        assert r.mean_bound >= abs(r.mean) - 1e-12


def test_posterior_fields_are_typed():
    hints = typing.get_type_hints(GPPosterior)
    assert hints["spec"] is KernelSpec
    assert hints["mean"] is MeanSpec
    assert hints["theta"] is Hyperparameters
