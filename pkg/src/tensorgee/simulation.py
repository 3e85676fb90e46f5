"""Shape-signal simulations and estimator benchmarking.

Shape masks are binary images; their geometry scales with the grid and, on
the default 64 x 64 grid, is:

* square: centered 16 x 16 block (rank 1)
* tshape: 8 x 32 horizontal bar on rows 16-23, cols 16-47, plus a 24 x 8
  vertical bar on rows 24-47, cols 28-35 (rank 2)
* disk: radius-15 disk around the grid center
* triangle: isosceles, apex on row 16, 32-pixel base on row 47
* butterfly: two mirrored triangles meeting at the center, 40 pixels wide
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .correlation import CorrKind, structured_matrix
from .data import LongitudinalDataset
from .family import get_family
from .solver import FitConfig, fit, fit_independence_init
from .tensor_core import DenseTensor, tensor_inner

log = logging.getLogger(__name__)

SHAPES = ("square", "tshape", "disk", "triangle", "butterfly")


def make_shape(name: str, grid=(64, 64)) -> DenseTensor:
    p1, p2 = (int(g) for g in grid)
    i = np.arange(p1)[:, None]
    j = np.arange(p2)[None, :]
    ci, cj = (p1 - 1) / 2, (p2 - 1) / 2
    if name == "square":
        s1, s2 = max(1, p1 // 4), max(1, p2 // 4)
        r0, c0 = (p1 - s1) // 2, (p2 - s2) // 2
        mask = (i >= r0) & (i < r0 + s1) & (j >= c0) & (j < c0 + s2)
    elif name == "tshape":
        top, bar_h = p1 // 4, max(1, p1 // 8)
        bottom = max(top + bar_h + 1, (3 * p1) // 4)
        stem_w = max(1, p2 // 8)
        stem_c0 = (p2 - stem_w) // 2
        horizontal = (i >= top) & (i < top + bar_h) & (j >= p2 // 4) & (j < (3 * p2) // 4)
        vertical = (i >= top + bar_h) & (i < bottom) & (j >= stem_c0) & (j < stem_c0 + stem_w)
        mask = horizontal | vertical
    elif name == "disk":
        radius = 15 * min(p1, p2) / 64
        mask = (i - ci) ** 2 + (j - cj) ** 2 <= radius ** 2
    elif name == "triangle":
        top, bottom = p1 // 4, (3 * p1) // 4 - 1
        half_base = p2 / 4
        height = max(bottom - top, 1)
        half_width = (i - top + 0.5) * half_base / height
        mask = (i >= top) & (i <= bottom) & (np.abs(j - cj) <= half_width)
    elif name == "butterfly":
        half_span = 20 * p2 / 64
        dj = np.abs(j - cj)
        mask = (dj <= half_span) & (np.abs(i - ci) <= 0.8 * dj)
    else:
        raise ValueError(f"unknown shape {name!r}; choose from {', '.join(SHAPES)}")
    return DenseTensor.from_array(mask.astype(float))


@dataclass(frozen=True)
class SimConfig:
    n: int = 500
    m: int = 4
    p0: int = 5
    sigma2: float = 1.0
    rho: float = 0.8
    corr: CorrKind = CorrKind.EXCHANGEABLE
    shape: str = "square"
    grid: tuple = (64, 64)
    seed: int = 0
    family: str = "gaussian"
    signal: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "corr", CorrKind(self.corr))
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be positive")
        if not 0 <= self.rho < 1:
            raise ValueError("rho must lie in [0, 1)")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be non-negative")


@dataclass
class SimTruth:
    tensor: np.ndarray
    gamma: np.ndarray
    corr: np.ndarray
    mu: np.ndarray


def true_correlation(cfg: SimConfig) -> np.ndarray:
    if cfg.corr is CorrKind.UNSTRUCTURED:
        raise ValueError("simulation truth must be a structured correlation")
    return structured_matrix(cfg.corr, cfg.m, cfg.rho)


def simulate(cfg: SimConfig) -> tuple[LongitudinalDataset, SimTruth]:
    """Draw a dataset: standard normal Z and X, gamma = 1, B from the shape.

    Gaussian responses are multivariate normal with covariance sigma2 * R0.
    Binomial and Poisson responses are drawn independently given the mean,
    so ``rho`` and ``sigma2`` are ignored for them.
    """
    rng = np.random.default_rng(cfg.seed)
    b = (np.asarray(cfg.signal, dtype=float) if cfg.signal is not None
         else make_shape(cfg.shape, cfg.grid).to_array())
    gamma = np.ones(cfg.p0)
    z = rng.standard_normal((cfg.n, cfg.m, cfg.p0))
    x = rng.standard_normal((cfg.n, cfg.m) + b.shape)
    mu_lin = tensor_inner(x, b) + (z @ gamma if cfg.p0 else 0.0)
    r0 = true_correlation(cfg)
    family = get_family(cfg.family)
    if family.is_gaussian:
        noise = rng.standard_normal((cfg.n, cfg.m)) @ np.linalg.cholesky(r0).T
        y = mu_lin + np.sqrt(cfg.sigma2) * noise
    elif family.name == "binomial":
        y = (rng.random((cfg.n, cfg.m)) < family.mean(mu_lin)).astype(float)
    else:
        y = rng.poisson(family.mean(mu_lin)).astype(float)
    data = LongitudinalDataset(y, z, x, family.name)
    return data, SimTruth(b, gamma, r0, family.mean(mu_lin))


@dataclass(frozen=True)
class EstimationMetrics:
    bias2: float
    variance: float
    mse: float
    mse_se: float
    reps: int


def estimation_metrics(estimates, truth) -> EstimationMetrics:
    """Squared bias, variance and MSE summed over tensor entries.

    Averages are over replicates; ``mse_se`` is the standard error of the
    per-replicate squared-error sums.
    """
    truth = np.asarray(truth, dtype=float)
    est = np.stack([np.asarray(e, dtype=float) for e in estimates])
    if est.shape[0] < 2:
        raise ValueError("need at least two replicate fits")
    if est.shape[1:] != truth.shape:
        raise ValueError(f"estimate dims {est.shape[1:]} do not match truth {truth.shape}")
    mean = est.mean(axis=0)
    bias2 = float(np.sum((mean - truth) ** 2))
    variance = float(np.sum(np.mean((est - mean) ** 2, axis=0)))
    sq_err = np.sum((est - truth) ** 2, axis=tuple(range(1, est.ndim)))
    se = float(np.std(sq_err, ddof=1) / np.sqrt(len(sq_err)))
    return EstimationMetrics(bias2, variance, bias2 + variance, se, len(sq_err))


def prediction_metrics(y_true, y_pred) -> tuple[float, float | None]:
    """RMSE and Pearson correlation; correlation is None when either input is constant."""
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if y_true.shape != y_pred.shape or y_true.size < 2:
        raise ValueError("need two equal-length vectors with at least two entries")
    rmse = float(np.sqrt(np.mean((y_true - y_pred) ** 2)))
    dt, dp = y_true - y_true.mean(), y_pred - y_pred.mean()
    denom = np.sqrt(np.sum(dt ** 2) * np.sum(dp ** 2))
    if denom == 0:
        return rmse, None
    return rmse, float(np.clip(np.sum(dt * dp) / denom, -1.0, 1.0))


@dataclass(frozen=True)
class BenchSpec:
    shape: str = "butterfly"
    n_list: tuple = (50, 100, 150)
    m: int = 10
    reps: int = 100
    corr_list: tuple = ("exchangeable", "ar1", "independence")
    rank: int = 2
    seed: int = 0
    rho: float = 0.8
    sigma2: float = 1.0
    grid: tuple = (64, 64)
    max_outer: int = 100
    tol: float = 1e-6


def _bench_replicate(args):
    spec, n, k = args
    sim = SimConfig(n=n, m=spec.m, rho=spec.rho, sigma2=spec.sigma2, shape=spec.shape,
                    grid=spec.grid, seed=spec.seed + k)
    data, _ = simulate(sim)
    init = fit_independence_init(data, spec.rank, seed=spec.seed + k, tol=spec.tol,
                                 max_outer=spec.max_outer)
    out = {}
    for corr in spec.corr_list:
        res = fit(data, FitConfig(rank=spec.rank, corr=corr, seed=spec.seed + k,
                                  max_outer=spec.max_outer, tol=spec.tol), init=init)
        out[corr] = (res.tensor(), res.converged)
    return out


def run_bench(spec: BenchSpec, jobs: int = 1) -> list[dict]:
    """Replicated fits per (n, working correlation); one summary row each."""
    truth = make_shape(spec.shape, spec.grid).to_array()
    rows = []
    for n in spec.n_list:
        tasks = [(spec, n, k) for k in range(spec.reps)]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_bench_replicate, tasks))
        else:
            results = [_bench_replicate(t) for t in tasks]
        for corr in spec.corr_list:
            est = [r[corr][0] for r in results]
            conv = sum(r[corr][1] for r in results)
            met = estimation_metrics(est, truth)
            rows.append({"n": n, "m": spec.m, "corr": corr, "bias2": met.bias2,
                         "variance": met.variance, "mse": met.mse, "mse_se": met.mse_se,
                         "converged": conv, "reps": spec.reps})
            log.info("n=%d corr=%s mse=%.2f (%.2f)", n, corr, met.mse, met.mse_se)
    return rows
