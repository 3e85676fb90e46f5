"""Sandwich covariance for the CP factor parameters and Wald intervals.

Raw factors are only identified up to per-component rescaling (and, for
matrices, a rotation), so the bread matrix is singular by construction. We
invert it with a pseudo-inverse and report the covariance of the normalized
factor entries through the Jacobian of the normalization map. The vector
coefficient gamma is not part of the inference.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .correlation import inverse
from .data import LongitudinalDataset
from .selection import effective_params
from .solver import FitResult, linear_predictors
from .tensor_core import block_design, normalize, normalize_jacobian

MAX_DIM = 4096
PINV_RCOND = 1e-10


class InferenceWarning(UserWarning):
    pass


def _check_size(result: FitResult) -> int:
    q = result.rank * sum(result.dims)
    if q > MAX_DIM:
        raise ValueError(f"R * sum(p_d) = {q} exceeds {MAX_DIM}; dense sandwich matrices would be "
                         "too large, reduce the rank or downsample the covariate")
    return q


def _full_design(data: LongitudinalDataset, result: FitResult) -> np.ndarray:
    """Per-observation rows vec(X_ij)'J, shape (n, m, R * sum p_d)."""
    factors = result.model.factors
    return np.concatenate([block_design(data.x, factors, d) for d in range(len(factors))],
                          axis=-1)


def _pieces(data: LongitudinalDataset, result: FitResult):
    """S_i = A_i^1/2 G_i, Pearson residuals and R^-1."""
    _check_size(result)
    theta = linear_predictors(data, result.model, result.gamma)
    a_half = np.sqrt(result.family.variance(theta))
    s = _full_design(data, result) * a_half[..., None]
    e = (data.y - result.family.mean(theta)) / a_half
    return s, e, inverse(result.wc)


def bread(data: LongitudinalDataset, result: FitResult) -> np.ndarray:
    """sum_i G_i' A_i^1/2 R^-1 A_i^1/2 G_i."""
    s, _, rinv = _pieces(data, result)
    t = np.einsum("jk,nkq->njq", rinv, s)
    q = s.shape[-1]
    out = s.reshape(-1, q).T @ t.reshape(-1, q)
    return 0.5 * (out + out.T)


def meat(data: LongitudinalDataset, result: FitResult) -> np.ndarray:
    """sum_i G_i' A_i^1/2 R^-1 Rbar R^-1 A_i^1/2 G_i, Rbar the residual moment matrix."""
    s, e, rinv = _pieces(data, result)
    q = s.shape[-1]
    if data.n == 0:
        return np.zeros((q, q))
    rbar = e.T @ e / data.n
    inner = rinv @ rbar @ rinv
    t = np.einsum("jk,nkq->njq", inner, s)
    out = s.reshape(-1, q).T @ t.reshape(-1, q)
    return 0.5 * (out + out.T)


@dataclass
class SandwichEstimate:
    bread: np.ndarray
    meat: np.ndarray
    cov: np.ndarray  # raw factor parameterization
    cov_normalized: np.ndarray
    se: np.ndarray  # of the normalized entries
    bread_rank: int


def sandwich(data: LongitudinalDataset, result: FitResult) -> SandwichEstimate:
    """bread^+ meat bread^+, mapped to the normalized factor entries."""
    model = result.model
    if model.ndim == 2 and model.rank > 1:
        warnings.warn("matrix CP factors of rank > 1 are identified only up to rotation; "
                      "entrywise intervals depend on the normalization", InferenceWarning,
                      stacklevel=2)
    b = bread(data, result)
    m = meat(data, result)
    q = b.shape[0]
    evals = np.linalg.eigvalsh(b)
    top = max(float(evals[-1]), 0.0) if q else 0.0
    rank = int(np.sum(evals > PINV_RCOND * top)) if top > 0 else 0
    # gauge directions account for q - p_e zero eigenvalues; more than that is real trouble
    if rank < min(effective_params(model.dims, model.rank), q):
        warnings.warn(f"bread matrix has rank {rank} below the {effective_params(model.dims, model.rank)} "
                      "identified parameters; using the pseudo-inverse", InferenceWarning,
                      stacklevel=2)
    binv = np.linalg.pinv(b, rcond=PINV_RCOND, hermitian=True)
    cov = binv @ m @ binv
    cov = 0.5 * (cov + cov.T)
    jac = normalize_jacobian(normalize(model))
    cov_n = jac @ cov @ jac.T
    cov_n = 0.5 * (cov_n + cov_n.T)
    diag = np.diag(cov_n).copy()
    if np.any(diag < 0):
        warnings.warn("negative variance estimates clamped to zero", InferenceWarning,
                      stacklevel=2)
        diag = np.maximum(diag, 0.0)
    return SandwichEstimate(b, m, cov, cov_n, np.sqrt(diag), rank)


@dataclass(frozen=True)
class WaldRow:
    block: int  # 1-based mode
    row: int  # 1-based index within the mode
    component: int  # 1-based rank component
    estimate: float
    se: float
    lo: float
    hi: float


def wald(result: FitResult, est: SandwichEstimate, level: float = 0.95) -> list[WaldRow]:
    """Entrywise normal-theory intervals for the normalized factor entries."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    model = normalize(result.model)
    beta = model.beta()
    if est.se.shape != beta.shape:
        raise ValueError("sandwich estimate does not match the fitted model")
    z = float(norm.ppf(0.5 + level / 2))
    rows = []
    k = 0
    for d, f in enumerate(model.factors):
        p, rank = f.shape
        for r in range(rank):
            for i in range(p):
                se = float(est.se[k])
                rows.append(WaldRow(d + 1, i + 1, r + 1, float(beta[k]), se,
                                    float(beta[k] - z * se), float(beta[k] + z * se)))
                k += 1
    return rows
