"""Working correlation structures and their residual-moment estimators."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

RHO_LIMIT = 0.99


class CorrKind(str, Enum):
    INDEPENDENCE = "independence"
    EXCHANGEABLE = "exchangeable"
    AR1 = "ar1"
    UNSTRUCTURED = "unstructured"


class CorrelationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class WorkingCorrelation:
    kind: CorrKind
    matrix: np.ndarray
    param: float | None = None
    clamped: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", CorrKind(self.kind))
        object.__setattr__(self, "matrix", np.atleast_2d(np.asarray(self.matrix, dtype=float)))

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, m: int) -> "WorkingCorrelation":
        return cls(CorrKind.INDEPENDENCE, np.eye(m))

    @classmethod
    def from_param(cls, kind, m: int, rho: float | None = None) -> "WorkingCorrelation":
        kind = CorrKind(kind)
        if kind is CorrKind.INDEPENDENCE:
            return cls.identity(m)
        if kind is CorrKind.UNSTRUCTURED:
            raise ValueError("unstructured correlation has no scalar parameter")
        return cls(kind, structured_matrix(kind, m, rho), rho)


def structured_matrix(kind, m: int, rho: float) -> np.ndarray:
    kind = CorrKind(kind)
    if kind is CorrKind.EXCHANGEABLE:
        return (1.0 - rho) * np.eye(m) + rho * np.ones((m, m))
    if kind is CorrKind.AR1:
        lags = np.abs(np.subtract.outer(np.arange(m), np.arange(m)))
        return rho ** lags
    if kind is CorrKind.INDEPENDENCE:
        return np.eye(m)
    raise ValueError(f"{kind.value} is not a one-parameter structure")


def pearson_residuals(data, gamma, model, family) -> np.ndarray:
    """(Y - mu) / sigma at the given parameters, shape (n, m)."""
    from .solver import linear_predictors

    theta = linear_predictors(data, model, gamma)
    mu = family.mean(theta)
    sigma = np.sqrt(family.variance(theta))
    bad = np.argwhere(~(sigma > 0))
    if bad.size:
        i, j = bad[0]
        raise FloatingPointError(
            f"zero variance at subject {i + 1}, time {j + 1}; fitted mean is degenerate")
    return (data.y - mu) / sigma


def _clamp(rho: float) -> tuple[float, bool]:
    if abs(rho) >= RHO_LIMIT:
        warnings.warn(f"estimated correlation {rho:.4f} clamped to ±{RHO_LIMIT}",
                      CorrelationWarning, stacklevel=3)
        return float(np.sign(rho) * RHO_LIMIT), True
    return float(rho), False


def estimate(kind, residuals) -> WorkingCorrelation:
    """Moment estimate of the working correlation from Pearson residuals.

    Exchangeable and AR-1 use the raw pair counts as denominators; the
    unstructured estimate is the residual second-moment matrix rescaled to a
    unit diagonal. A single time point always gives the 1 x 1 identity.
    """
    kind = CorrKind(kind)
    e = np.atleast_2d(np.asarray(residuals, dtype=float))
    n, m = e.shape
    if kind is CorrKind.INDEPENDENCE or m == 1:
        return WorkingCorrelation(kind, np.eye(m), None if kind is CorrKind.INDEPENDENCE else 0.0)
    if n < 2:
        raise ValueError("at least two subjects are needed to estimate a working correlation")

    if kind is CorrKind.EXCHANGEABLE:
        s = e.sum(axis=1)
        pair_sum = 0.5 * np.sum(s ** 2 - np.sum(e ** 2, axis=1))
        rho, clamped = _clamp(pair_sum / (n * m * (m - 1) / 2))
        return WorkingCorrelation(kind, structured_matrix(kind, m, rho), rho, clamped)

    if kind is CorrKind.AR1:
        rho, clamped = _clamp(np.sum(e[:, :-1] * e[:, 1:]) / (n * (m - 1)))
        return WorkingCorrelation(kind, structured_matrix(kind, m, rho), rho, clamped)

    moment = e.T @ e / n
    moment = 0.5 * (moment + moment.T)
    scale = np.sqrt(np.diag(moment))
    if np.any(scale <= 0):
        raise np.linalg.LinAlgError(
            "unstructured correlation has a zero-variance time point; use a structured kind")
    corr = moment / np.outer(scale, scale)
    np.fill_diagonal(corr, 1.0)
    try:
        np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            "unstructured correlation estimate is not positive definite; "
            "use exchangeable or ar1 instead") from None
    return WorkingCorrelation(kind, corr)


def inverse(wc: WorkingCorrelation) -> np.ndarray:
    m = wc.m
    if wc.kind is CorrKind.INDEPENDENCE or m == 1:
        return np.eye(m)
    if wc.kind is CorrKind.EXCHANGEABLE:
        rho = wc.param
        denom = 1.0 + (m - 1) * rho
        if abs(1.0 - rho) < 1e-15 or abs(denom) < 1e-15:
            raise np.linalg.LinAlgError(f"exchangeable correlation {rho} is singular for m={m}")
        return (np.eye(m) - (rho / denom) * np.ones((m, m))) / (1.0 - rho)
    try:
        inv = np.linalg.inv(wc.matrix)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("working correlation matrix is singular") from None
    return 0.5 * (inv + inv.T)
