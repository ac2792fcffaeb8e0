import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nml import net
from nml.harness import data

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def central_diff(f, x, v, eps=1e-6):
    return (f(x + eps * v) - f(x - eps * v)) / (2 * eps)


@pytest.fixture(scope="session")
def clusters():
    return data.synthetic(clusters=10, dim=10, n=512, seed=0)


@pytest.fixture
def batch(clusters):
    X, y = clusters
    return X[:64], y[:64]


@pytest.fixture
def relu_net():
    return net.build(net.mlp_spec([10, 12, 12, 10]), seed=3, bias_std=0.1)


@pytest.fixture
def bn_net():
    return net.build(net.mlp_spec([10, 12, 12, 10], batchnorm=True), seed=4, bias_std=0.1)
