# gp/kernels.py

"""
Prior mean and covariance functions of the reference GP.

Two covariance families are supported:

    squared_exponential   k(t, t') = theta1^2 exp(-(t - t')^2 / (2 theta2^2))
    periodic              k(t, t') = theta1^2 exp(-(2 / theta2^2) sin^2(pi (t - t') / theta3))

All evaluation functions broadcast over numpy arrays and return a plain float
for scalar input. Time derivatives are taken with respect to the *second*
argument, i.e. eval_kernel_dt(t_i, t) = d k(t_i, t) / dt.
"""

import math
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from utils.errors import ConfigurationError, UnsupportedOperationError


class KernelFamily(str, Enum):
    SQUARED_EXPONENTIAL = "squared_exponential"
    PERIODIC = "periodic"


PARAMETER_COUNT = {
    KernelFamily.SQUARED_EXPONENTIAL: 2,
    KernelFamily.PERIODIC: 3,
}


class Hyperparameters(BaseModel):
    """theta vector (output scale, length scale[, period]) plus the measurement noise variance."""

    model_config = ConfigDict(frozen=True)

    values: tuple[float, ...]
    noise_variance: float = 0.0

    @field_validator("values")
    @classmethod
    def _positive_scales(cls, values):
        if not values:
            raise ValueError("at least one hyperparameter is required")
        for idx, v in enumerate(values):
            if not math.isfinite(v) or v <= 0.0:
                raise ValueError(f"theta{idx + 1} must be finite and strictly positive, got {v}")
        return values

    @field_validator("noise_variance")
    @classmethod
    def _nonnegative_noise(cls, value):
        if not math.isfinite(value) or value < 0.0:
            raise ValueError(f"noise_variance must be finite and >= 0, got {value}")
        return value

    @property
    def theta1(self):
        return self.values[0]

    @property
    def theta2(self):
        return self.values[1]

    @property
    def theta3(self):
        if len(self.values) < 3:
            raise ConfigurationError("theta3 (period) is only defined for the periodic kernel")
        return self.values[2]

    def log_values(self):
        return np.log(np.asarray(self.values, dtype=float))

    @classmethod
    def from_log(cls, log_values, noise_variance=0.0):
        return cls(values=tuple(float(v) for v in np.exp(log_values)), noise_variance=float(noise_variance))


class KernelSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    family: KernelFamily = KernelFamily.SQUARED_EXPONENTIAL

    @property
    def parameter_count(self):
        return PARAMETER_COUNT[self.family]

    def validate_hyperparameters(self, theta):
        if len(theta.values) != self.parameter_count:
            raise ConfigurationError(
                f"{self.family.value} kernel expects {self.parameter_count} hyperparameters, got {len(theta.values)}"
            )


class MeanSpec(BaseModel):
    """Constant prior mean."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    constant_value: float = 0.0


def _scalar_or_array(value):
    value = np.asarray(value, dtype=float)
    return float(value) if value.ndim == 0 else value


def _lag(t_i, t):
    return np.subtract(np.asarray(t, dtype=float), np.asarray(t_i, dtype=float))


def eval_kernel(spec, theta, t, t_prime):
    spec.validate_hyperparameters(theta)
    d = np.abs(_lag(t, t_prime))
    s2 = theta.theta1 ** 2
    if spec.family is KernelFamily.SQUARED_EXPONENTIAL:
        value = s2 * np.exp(-0.5 * (d / theta.theta2) ** 2)
    else:
        value = s2 * np.exp(-2.0 / theta.theta2 ** 2 * np.sin(np.pi * d / theta.theta3) ** 2)
    return _scalar_or_array(value)


def eval_kernel_dt(spec, theta, t_i, t):
    spec.validate_hyperparameters(theta)
    d = _lag(t_i, t)
    k = np.asarray(eval_kernel(spec, theta, t_i, t))
    if spec.family is KernelFamily.SQUARED_EXPONENTIAL:
        value = -d / theta.theta2 ** 2 * k
    else:
        w = np.pi / theta.theta3
        value = -(2.0 * w / theta.theta2 ** 2) * np.sin(2.0 * w * d) * k
    return _scalar_or_array(value)


def eval_kernel_dtt(spec, theta, t_i, t):
    spec.validate_hyperparameters(theta)
    d = _lag(t_i, t)
    k = np.asarray(eval_kernel(spec, theta, t_i, t))
    l2 = theta.theta2 ** 2
    if spec.family is KernelFamily.SQUARED_EXPONENTIAL:
        value = (d ** 2 / l2 ** 2 - 1.0 / l2) * k
    else:
        w = np.pi / theta.theta3
        phi = 2.0 * w * d
        value = -(4.0 * w ** 2 / l2) * (np.cos(phi) - np.sin(phi) ** 2 / l2) * k
    return _scalar_or_array(value)


def monotonicity_threshold(spec, theta):
    """Lag beyond which |dk/dt| strictly decreases. Only the squared exponential family has one: theta2."""
    spec.validate_hyperparameters(theta)
    if spec.family is not KernelFamily.SQUARED_EXPONENTIAL:
        raise UnsupportedOperationError(f"monotonicity threshold is undefined for the {spec.family.value} kernel")
    return theta.theta2


def eval_mean(mean, t):
    if np.ndim(t) == 0:
        return float(mean.constant_value)
    return np.full(np.shape(t), float(mean.constant_value))


# --- Suprema of the kernel derivatives (Lipschitz constants) ---

def _periodic_dt_peak(theta):
    l2 = theta.theta2 ** 2
    c = 0.5 * (-l2 + math.sqrt(l2 ** 2 + 4.0))
    h = math.sqrt(max(1.0 - c * c, 0.0)) * math.exp(-(1.0 - c) / l2)
    return 2.0 * (math.pi / theta.theta3) * theta.theta1 ** 2 / l2 * h


def _periodic_dtt_peak(theta):
    l2 = theta.theta2 ** 2

    def g(c):
        return abs((c - (1.0 - c * c) / l2) * math.exp(-(1.0 - c) / l2))

    disc = math.sqrt(5.0 * l2 ** 2 + 4.0)
    candidates = [-1.0, 1.0] + [c for c in ((-3.0 * l2 + disc) / 2.0, (-3.0 * l2 - disc) / 2.0) if -1.0 <= c <= 1.0]
    w = math.pi / theta.theta3
    return 4.0 * w ** 2 * theta.theta1 ** 2 / l2 * max(g(c) for c in candidates)


def _contains(d_lo, d_hi, point):
    return (d_lo <= point) & (point <= d_hi)


def kernel_dt_sup(spec, theta, t_i, t_lo, t_hi):
    """sup over t in [t_lo, t_hi] of |dk(t_i, t)/dt|, elementwise in t_i.

    Exact for the squared exponential kernel. For the periodic kernel the
    global maximum over all lags is returned, which is a valid upper bound.
    """
    spec.validate_hyperparameters(theta)
    t_i = np.atleast_1d(np.asarray(t_i, dtype=float))
    if spec.family is KernelFamily.PERIODIC:
        return np.full(t_i.shape, _periodic_dt_peak(theta))

    l = theta.theta2
    d_lo, d_hi = t_lo - t_i, t_hi - t_i
    ends = np.maximum(np.abs(eval_kernel_dt(spec, theta, 0.0, d_lo)), np.abs(eval_kernel_dt(spec, theta, 0.0, d_hi)))
    # |dk/dt| peaks at |lag| = theta2
    peak = theta.theta1 ** 2 / l * math.exp(-0.5)
    inside = _contains(d_lo, d_hi, l) | _contains(d_lo, d_hi, -l)
    return np.where(inside, peak, ends)


def kernel_dtt_sup(spec, theta, t_i, t_lo, t_hi):
    """sup over t in [t_lo, t_hi] of |d^2 k(t_i, t)/dt^2|, elementwise in t_i (same exactness as kernel_dt_sup)."""
    spec.validate_hyperparameters(theta)
    t_i = np.atleast_1d(np.asarray(t_i, dtype=float))
    if spec.family is KernelFamily.PERIODIC:
        return np.full(t_i.shape, _periodic_dtt_peak(theta))

    l = theta.theta2
    s2_l2 = theta.theta1 ** 2 / l ** 2
    d_lo, d_hi = t_lo - t_i, t_hi - t_i
    ends = np.maximum(np.abs(eval_kernel_dtt(spec, theta, 0.0, d_lo)), np.abs(eval_kernel_dtt(spec, theta, 0.0, d_hi)))
    at_zero = np.where(_contains(d_lo, d_hi, 0.0), s2_l2, 0.0)
    r3 = math.sqrt(3.0) * l
    side_peak = np.where(_contains(d_lo, d_hi, r3) | _contains(d_lo, d_hi, -r3), s2_l2 * 2.0 * math.exp(-1.5), 0.0)
    return np.maximum(ends, np.maximum(at_zero, side_peak))
