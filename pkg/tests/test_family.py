import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from tensorgee.family import Family, get_family, linear_predictor
from tensorgee.tensor_core import CpModel, DenseTensor

THETA = np.linspace(-4, 4, 17)


@pytest.mark.parametrize("name", ["gaussian", "binomial", "poisson"])
def test_variance_is_derivative_of_mean(name):
    fam = get_family(name)
    h = 1e-6
    fd = (fam.mean(THETA + h) - fam.mean(THETA - h)) / (2 * h)
    assert_allclose(fam.variance(THETA), fd, rtol=1e-7)


def test_loglik_against_scipy():
    theta = np.array([-1.2, 0.3, 2.0])
    y = np.array([0.5, -1.0, 3.0])
    assert_allclose(get_family("gaussian").loglik(y, theta),
                    stats.norm.logpdf(y, loc=theta).sum(), rtol=1e-12)
    yb = np.array([0.0, 1.0, 1.0])
    p = 1 / (1 + np.exp(-theta))
    assert_allclose(get_family("binomial").loglik(yb, theta),
                    stats.bernoulli.logpmf(yb, p).sum(), rtol=1e-12)
    yp = np.array([0.0, 2.0, 7.0])
    assert_allclose(get_family("poisson").loglik(yp, theta),
                    stats.poisson.logpmf(yp, np.exp(theta)).sum(), rtol=1e-12)


@pytest.mark.parametrize("name,y", [("gaussian", [0.2, -1.0, 2.5]), ("binomial", [0.0, 1.0, 1.0]),
                                    ("poisson", [0.0, 3.0, 1.0])])
def test_deviance_is_twice_loglik_gap(name, y):
    fam = get_family(name)
    y = np.array(y)
    theta = np.array([0.1, -0.4, 0.9])
    if name == "gaussian":
        sat = y
    elif name == "binomial":
        sat = np.where(y > 0, 30.0, -30.0)  # saturated mean sits at the clamp
    else:
        sat = np.log(np.maximum(y, 1e-300))
    expected = 2 * (fam.loglik(y, sat) - fam.loglik(y, theta))
    assert_allclose(fam.deviance(y, theta), expected, rtol=1e-8, atol=1e-10)


def test_binomial_mean_at_zero_and_clamp():
    fam = get_family("binomial")
    assert fam.mean(0.0) == 0.5
    assert np.isfinite(fam.mean(1e6)) and fam.variance(1e6) > 0


def test_linear_predictor_single_observation():
    rng = np.random.default_rng(1)
    model = CpModel((rng.standard_normal((3, 2)), rng.standard_normal((4, 2))))
    x = rng.standard_normal((3, 4))
    gamma, z = np.array([1.0, -2.0]), np.array([0.5, 0.25])
    got = linear_predictor(gamma, z, model, DenseTensor.from_array(x))
    assert_allclose(got, gamma @ z + np.sum(model.full() * x), rtol=1e-12)
    with pytest.raises(ValueError):
        linear_predictor(gamma, z[:1], model, DenseTensor.from_array(x))


def test_family_validation():
    with pytest.raises(ValueError):
        Family("gamma")
    with pytest.raises(ValueError):
        Family("gaussian", dispersion=2.0)
    assert get_family(Family("poisson")).name == "poisson"
