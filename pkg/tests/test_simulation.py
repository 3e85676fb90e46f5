import numpy as np
import pytest
from numpy.testing import assert_allclose

from tensorgee.simulation import (SHAPES, BenchSpec, SimConfig, estimation_metrics, make_shape,
                                  prediction_metrics, run_bench, simulate)
from tensorgee.tensor_core import tensor_inner


def rank(name, grid=(64, 64)):
    return np.linalg.matrix_rank(make_shape(name, grid).to_array())


@pytest.mark.parametrize("name", SHAPES)
def test_shapes_are_binary_and_deterministic(name):
    a = make_shape(name).to_array()
    assert a.shape == (64, 64)
    assert set(np.unique(a)) == {0.0, 1.0}
    assert np.array_equal(a, make_shape(name).to_array())


def test_shape_ranks():
    assert rank("square") == 1
    assert rank("tshape") == 2
    for name in ("disk", "triangle", "butterfly"):
        assert rank(name) > 8
    assert rank("tshape", (16, 16)) == 2 and rank("square", (8, 8)) == 1


def test_documented_geometry():
    sq = make_shape("square").to_array()
    assert sq.sum() == 256 and sq[24:40, 24:40].all()
    t = make_shape("tshape").to_array()
    assert t[16:24, 16:48].all() and t[24:48, 28:36].all() and t.sum() == 8 * 32 + 24 * 8
    d = make_shape("disk").to_array()
    assert d[31, 31 - 14] == 1 and d[31, 31 - 17] == 0


def test_unknown_shape():
    with pytest.raises(ValueError):
        make_shape("hexagon")


def test_simulate_is_reproducible_bit_for_bit():
    cfg = SimConfig(n=20, m=3, grid=(8, 8), seed=4)
    a, _ = simulate(cfg)
    b, _ = simulate(cfg)
    for f in ("y", "z", "x"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    c, _ = simulate(SimConfig(n=20, m=3, grid=(8, 8), seed=5))
    assert not np.array_equal(a.y, c.y)


def test_noiseless_responses_equal_mean():
    data, truth = simulate(SimConfig(n=10, m=3, grid=(8, 8), sigma2=0.0, seed=1))
    assert np.array_equal(data.y, truth.mu)
    expected = tensor_inner(data.x, truth.tensor) + data.z @ np.ones(5)
    assert_allclose(truth.mu, expected)


def test_noise_correlation_matches_truth():
    data, truth = simulate(SimConfig(n=2000, m=4, grid=(4, 4), rho=0.8, seed=6))
    e = data.y - truth.mu
    c = np.corrcoef(e, rowvar=False)
    off = c[~np.eye(4, dtype=bool)]
    assert np.all(np.abs(off - 0.8) < 0.05)
    data, truth = simulate(SimConfig(n=2000, m=4, grid=(4, 4), rho=0.0, seed=6))
    e = data.y - truth.mu
    assert abs(np.corrcoef(e[:, :-1].ravel(), e[:, 1:].ravel())[0, 1]) < 0.05


def test_nongaussian_simulation():
    data, truth = simulate(SimConfig(n=50, m=2, grid=(4, 4), family="binomial", seed=1))
    assert set(np.unique(data.y)) <= {0.0, 1.0}
    assert np.all((truth.mu > 0) & (truth.mu < 1))
    data, _ = simulate(SimConfig(n=50, m=2, grid=(4, 4), family="poisson", seed=1,
                                 signal=0.1 * np.ones((4, 4)), p0=0))
    assert np.all(data.y >= 0) and data.p0 == 0


def test_config_validation():
    for bad in (dict(n=0), dict(rho=1.0), dict(rho=-0.1), dict(sigma2=-1.0)):
        with pytest.raises(ValueError):
            SimConfig(**bad)
    with pytest.raises(ValueError):
        simulate(SimConfig(corr="unstructured"))


def test_estimation_metrics_examples():
    truth = np.zeros((2, 2))
    zero = estimation_metrics([truth, truth], truth)
    assert (zero.bias2, zero.variance, zero.mse) == (0.0, 0.0, 0.0)
    spike = np.zeros((2, 2))
    spike[0, 1] = 1.0
    met = estimation_metrics([truth + spike, truth - spike], truth)
    assert (met.bias2, met.variance, met.mse) == (0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        estimation_metrics([truth], truth)
    with pytest.raises(ValueError):
        estimation_metrics([np.zeros((3, 2)), np.zeros((3, 2))], truth)


def test_decomposition_identity():
    rng = np.random.default_rng(0)
    truth = rng.standard_normal((5, 5))
    est = [truth + rng.standard_normal((5, 5)) + 0.3 for _ in range(7)]
    met = estimation_metrics(est, truth)
    sq = [np.sum((e - truth) ** 2) for e in est]
    assert abs(met.bias2 + met.variance - np.mean(sq)) < 1e-12
    assert_allclose(met.mse_se, np.std(sq, ddof=1) / np.sqrt(7))


def test_prediction_metrics_examples():
    assert prediction_metrics([1, 2, 3], [1, 2, 3]) == (0.0, 1.0)
    rmse, corr = prediction_metrics([0, 2], [1, 1])
    assert rmse == 1.0 and corr is None
    rmse, corr = prediction_metrics([1, 2, 3], [2, 3, 4])
    assert rmse == 1.0 and abs(corr - 1.0) < 1e-15
    with pytest.raises(ValueError):
        prediction_metrics([1], [1])


@pytest.mark.filterwarnings("ignore::tensorgee.correlation.CorrelationWarning")
def test_bench_rows_are_deterministic():
    spec = BenchSpec(shape="square", n_list=(30, 60), m=3, reps=3, grid=(8, 8), rank=1,
                     corr_list=("exchangeable", "independence"))
    rows = run_bench(spec)
    assert [(r["n"], r["corr"]) for r in rows] == [(30, "exchangeable"), (30, "independence"),
                                                  (60, "exchangeable"), (60, "independence")]
    assert rows == run_bench(spec)
    assert all(abs(r["bias2"] + r["variance"] - r["mse"]) < 1e-12 for r in rows)
