# gp/posterior.py

"""
GP posterior inference for scalar references.

The posterior mean is kept in its weighted-sum form

    m+(t*) = m + sum_i c_i k(t_i, t*),    (K + sigma_n^2 I) c = y - m

so the mean, its time derivative and the triangle-inequality envelopes
m_bar(t*) = sum_i |c_i| k(t_i, t*) and mdot_bar(t*) = sum_i |c_i| |dk(t_i, t*)/dt|
all reuse the same coefficient vector. The Cholesky factor of the regularised
Gram matrix is cached on the posterior for variance queries and the NLML.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import linalg

from gp.kernels import Hyperparameters, KernelSpec, MeanSpec, eval_kernel, eval_kernel_dt, eval_mean
from utils.errors import DataError, NumericalError

RESIDUAL_TOLERANCE = 1e-10
VARIANCE_TOLERANCE = 1e-10
JITTER_SCALE = 1e-10


class DatasetRole(str, Enum):
    HYPERPARAMETER_TRAINING = "hyperparameter_training"
    PREDICTION_TRAINING = "prediction_training"


@dataclass(frozen=True)
class Dataset:
    """Time/value observations. Times are non-negative and strictly increasing."""

    t: np.ndarray
    y: np.ndarray
    role: DatasetRole = DatasetRole.HYPERPARAMETER_TRAINING

    def __post_init__(self):
        t = np.array(self.t, dtype=float).ravel()
        y = np.array(self.y, dtype=float).ravel()
        if t.size == 0:
            raise DataError("dataset is empty")
        if t.size != y.size:
            raise DataError(f"time and value columns differ in length ({t.size} vs {y.size})")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise DataError("dataset contains non-finite values")
        if np.any(t < 0.0):
            raise DataError("observation times must be non-negative")
        if np.any(np.diff(t) <= 0.0):
            raise DataError("observation times must be strictly increasing")
        t.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_points(cls, points, role=DatasetRole.HYPERPARAMETER_TRAINING):
        """Builds a dataset from unordered (t, y) pairs, sorting by time and rejecting duplicate times."""
        points = sorted((float(t), float(y)) for t, y in points)
        for (t_prev, _), (t_next, _) in zip(points, points[1:]):
            if t_prev == t_next:
                raise DataError(f"duplicate observation time t={t_next}")
        return cls(t=[p[0] for p in points], y=[p[1] for p in points], role=role)

    def with_role(self, role):
        return Dataset(t=self.t, y=self.y, role=role)

    def __len__(self):
        return int(self.t.size)


@dataclass(frozen=True)
class GPPosterior:
    spec: KernelSpec
    mean: MeanSpec
    theta: Hyperparameters
    data: Dataset
    coefficients: np.ndarray
    cholesky: np.ndarray
    residual: np.ndarray
    jitter: float = 0.0


@dataclass(frozen=True)
class PredictionRecord:
    t: float
    mean: float
    variance: float
    mean_bound: float
    derivative_bound: float


def gram_matrix(spec, theta, t):
    t = np.asarray(t, dtype=float)
    return eval_kernel(spec, theta, t[:, None], t[None, :])


def _smallest_pivot(matrix):
    try:
        _, d, _ = linalg.ldl(matrix)
        return float(np.min(np.diag(d)))
    except (ValueError, linalg.LinAlgError):
        return float("nan")


def _factorize(matrix, theta):
    try:
        return linalg.cholesky(matrix, lower=True), 0.0
    except (linalg.LinAlgError, ValueError):
        pass

    jitter = JITTER_SCALE * theta.theta1 ** 2
    logging.warning(f"Gram matrix factorisation failed, retrying with jitter {jitter:.3e}")
    try:
        return linalg.cholesky(matrix + jitter * np.eye(matrix.shape[0]), lower=True), jitter
    except (linalg.LinAlgError, ValueError) as e:
        raise NumericalError(
            f"regularised Gram matrix is not positive definite (smallest pivot {_smallest_pivot(matrix):.3e}): {e}"
        ) from e


def build_posterior(spec, mean, theta, data):
    spec.validate_hyperparameters(theta)
    gram = gram_matrix(spec, theta, data.t) + theta.noise_variance * np.eye(len(data))
    cholesky, jitter = _factorize(gram, theta)

    residual = data.y - eval_mean(mean, data.t)
    coefficients = linalg.cho_solve((cholesky, True), residual)

    regularised = gram + jitter * np.eye(len(data))
    scale = max(np.linalg.norm(residual), np.finfo(float).tiny)
    rel_residual = np.linalg.norm(regularised @ coefficients - residual) / scale
    if rel_residual > RESIDUAL_TOLERANCE:
        logging.warning(f"Gram solve relative residual {rel_residual:.3e} exceeds {RESIDUAL_TOLERANCE:.0e}")

    coefficients.setflags(write=False)
    return GPPosterior(
        spec=spec, mean=mean, theta=theta, data=data,
        coefficients=coefficients, cholesky=cholesky, residual=residual, jitter=jitter,
    )


# --- Posterior queries ---

def _query(t_star):
    ts = np.asarray(t_star, dtype=float)
    return np.atleast_1d(ts).ravel(), ts.ndim == 0, ts.shape


def _shape_output(values, scalar, shape):
    return float(values[0]) if scalar else values.reshape(shape)


def _cross_kernel(P, ts):
    return eval_kernel(P.spec, P.theta, ts[:, None], P.data.t[None, :])


def _cross_kernel_dt(P, ts):
    return eval_kernel_dt(P.spec, P.theta, P.data.t[None, :], ts[:, None])


def posterior_mean(P, t_star):
    ts, scalar, shape = _query(t_star)
    values = eval_mean(P.mean, ts) + _cross_kernel(P, ts) @ P.coefficients
    return _shape_output(values, scalar, shape)


def posterior_variance(P, t_star):
    ts, scalar, shape = _query(t_star)
    prior = P.theta.theta1 ** 2
    v = linalg.solve_triangular(P.cholesky, _cross_kernel(P, ts).T, lower=True)
    values = prior - np.sum(v * v, axis=0)

    tolerance = VARIANCE_TOLERANCE * max(1.0, prior) * len(P.data)
    if np.any(values < -tolerance):
        raise NumericalError(f"posterior variance {values.min():.3e} is negative beyond round-off")
    return _shape_output(np.clip(values, 0.0, prior), scalar, shape)


def posterior_mean_dt(P, t_star):
    ts, scalar, shape = _query(t_star)
    return _shape_output(_cross_kernel_dt(P, ts) @ P.coefficients, scalar, shape)


def mean_bound(P, t_star):
    ts, scalar, shape = _query(t_star)
    return _shape_output(_cross_kernel(P, ts) @ np.abs(P.coefficients), scalar, shape)


def mean_dt_bound(P, t_star):
    ts, scalar, shape = _query(t_star)
    return _shape_output(np.abs(_cross_kernel_dt(P, ts)) @ np.abs(P.coefficients), scalar, shape)


def posterior_nlml(P):
    """l(theta) = ln|K + sigma_n^2 I| + r^T (K + sigma_n^2 I)^-1 r + n ln(2 pi), r = y - m."""
    log_det = 2.0 * np.sum(np.log(np.diag(P.cholesky)))
    return float(P.residual @ P.coefficients + log_det + len(P.data) * math.log(2.0 * math.pi))


def nlml(spec, mean, theta, data):
    return posterior_nlml(build_posterior(spec, mean, theta, data))


def predict(P, times):
    times = np.atleast_1d(np.asarray(times, dtype=float))
    means = posterior_mean(P, times)
    variances = posterior_variance(P, times)
    bounds = mean_bound(P, times)
    deriv_bounds = mean_dt_bound(P, times)
    return [
        PredictionRecord(t=float(t), mean=float(m), variance=float(v), mean_bound=float(b), derivative_bound=float(d))
        for t, m, v, b, d in zip(times, means, variances, bounds, deriv_bounds)
    ]
