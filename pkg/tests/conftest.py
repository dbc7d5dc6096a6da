# tests/conftest.py

import numpy as np
import pytest

from checks.reachability import LinearSystem1D
from gp.kernels import Hyperparameters, KernelFamily, KernelSpec, MeanSpec
from gp.posterior import Dataset


@pytest.fixture
def se_spec():
    return KernelSpec(family=KernelFamily.SQUARED_EXPONENTIAL)


@pytest.fixture
def periodic_spec():
    return KernelSpec(family=KernelFamily.PERIODIC)


@pytest.fixture
def zero_mean():
    return MeanSpec(constant_value=0.0)


@pytest.fixture
def unit_theta():
    return Hyperparameters(values=(1.0, 1.0), noise_variance=0.0)


@pytest.fixture
def transient_system():
    # x+ = 0.9 x + 0.5 u, X = [-2, 0.05], U = [-0.5, 0.5]
    return LinearSystem1D(a=0.9, b=0.5, x_lo=-2.0, x_hi=0.05, u_lo=-0.5, u_hi=0.5, sampling_time=0.01)


@pytest.fixture
def periodic_system():
    return LinearSystem1D(a=0.9, b=0.1, x_lo=-2.0, x_hi=2.0, u_lo=-3.0, u_hi=1.4, sampling_time=0.1)


@pytest.fixture
def integrator():
    return LinearSystem1D(a=1.0, b=1.0, x_lo=-5.0, x_hi=5.0, u_lo=-1.0, u_hi=1.0, sampling_time=1.0)


@pytest.fixture
def random_dataset():
    rng = np.random.default_rng(42)
    t = np.sort(rng.uniform(0.0, 3.0, size=5))
    return Dataset(t=t, y=rng.normal(size=5))
