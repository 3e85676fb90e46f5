import numpy as np
import pytest

from tensorgee.correlation import structured_matrix
from tensorgee.data import LongitudinalDataset
from tensorgee.family import get_family
from tensorgee.tensor_core import CpModel, tensor_inner

ACCEPTANCE_LINES = []


def make_data(rng, n=20, m=3, dims=(4, 5), p0=2, rank=1, rho=0.5, corr="exchangeable",
              family="gaussian", noise=1.0, signal=None):
    """Small random dataset with a random CP signal; returns (data, true model, gamma)."""
    if signal is None:
        model = CpModel(tuple(rng.standard_normal((p, rank)) for p in dims))
        b = model.full()
    else:
        model, b = None, np.asarray(signal, dtype=float)
        dims = b.shape
    gamma = rng.standard_normal(p0)
    z = rng.standard_normal((n, m, p0))
    x = rng.standard_normal((n, m) + tuple(dims))
    theta = tensor_inner(x, b) + (z @ gamma if p0 else 0.0)
    fam = get_family(family)
    if fam.is_gaussian:
        r0 = structured_matrix(corr, m, rho)
        y = theta + noise * rng.standard_normal((n, m)) @ np.linalg.cholesky(r0).T
    elif fam.name == "binomial":
        y = (rng.random((n, m)) < fam.mean(theta)).astype(float)
    else:
        y = rng.poisson(fam.mean(theta)).astype(float)
    return LongitudinalDataset(y, z, x, fam.name), model, gamma


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
