"""Canonical-link exponential families with unit dispersion."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit, gammaln

from .tensor_core import CpModel, DenseTensor, mode_design

THETA_CLAMP = 30.0


class FamilyKind(str, Enum):
    GAUSSIAN = "gaussian"
    BINOMIAL = "binomial"
    POISSON = "poisson"


@dataclass(frozen=True)
class Family:
    kind: FamilyKind = FamilyKind.GAUSSIAN
    dispersion: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", FamilyKind(self.kind))
        if self.dispersion != 1.0:
            raise ValueError("only unit dispersion is supported")

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def is_gaussian(self) -> bool:
        return self.kind is FamilyKind.GAUSSIAN

    def mean(self, theta):
        """mu(theta) under the canonical link."""
        theta = np.asarray(theta, dtype=float)
        if self.kind is FamilyKind.GAUSSIAN:
            return theta.copy() if theta.ndim else float(theta)
        t = np.clip(theta, -THETA_CLAMP, THETA_CLAMP)
        out = expit(t) if self.kind is FamilyKind.BINOMIAL else np.exp(t)
        return out if out.ndim else float(out)

    def variance(self, theta):
        """sigma^2(theta) = dmu/dtheta (dispersion fixed at 1)."""
        theta = np.asarray(theta, dtype=float)
        if self.kind is FamilyKind.GAUSSIAN:
            out = np.ones_like(theta)
        elif self.kind is FamilyKind.BINOMIAL:
            mu = expit(np.clip(theta, -THETA_CLAMP, THETA_CLAMP))
            out = mu * (1.0 - mu)
        else:
            out = np.exp(np.clip(theta, -THETA_CLAMP, THETA_CLAMP))
        return out if out.ndim else float(out)

    def loglik(self, y, theta) -> float:
        """Full log-likelihood summed over all observations."""
        y = np.asarray(y, dtype=float)
        theta = np.asarray(theta, dtype=float)
        if self.kind is FamilyKind.GAUSSIAN:
            return float(-0.5 * np.sum((y - theta) ** 2) - 0.5 * y.size * np.log(2 * np.pi))
        t = np.clip(theta, -THETA_CLAMP, THETA_CLAMP)
        if self.kind is FamilyKind.BINOMIAL:
            return float(np.sum(y * t - np.logaddexp(0.0, t)))
        return float(np.sum(y * t - np.exp(t) - gammaln(y + 1.0)))

    def deviance(self, y, theta) -> float:
        """Deviance 2 * (saturated loglik - loglik)."""
        y = np.asarray(y, dtype=float)
        mu = np.asarray(self.mean(theta), dtype=float)
        if self.kind is FamilyKind.GAUSSIAN:
            return float(np.sum((y - mu) ** 2))
        if self.kind is FamilyKind.BINOMIAL:
            with np.errstate(divide="ignore", invalid="ignore"):
                a = np.where(y > 0, y * np.log(y / mu), 0.0)
                b = np.where(y < 1, (1 - y) * np.log((1 - y) / (1 - mu)), 0.0)
            return float(2 * np.sum(a + b))
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(y > 0, y * np.log(y / mu), 0.0)
        return float(2 * np.sum(a - (y - mu)))


def get_family(family) -> Family:
    if isinstance(family, Family):
        return family
    return Family(FamilyKind(family))


def linear_predictor(gamma, z, m: CpModel, x: DenseTensor) -> float:
    """theta = gamma'z + <B, X> for a single observation."""
    gamma = np.asarray(gamma, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    if gamma.shape != z.shape:
        raise ValueError(f"gamma has length {gamma.size} but z has length {z.size}")
    if x.dims != m.dims:
        raise ValueError(f"dimension mismatch: tensor {x.dims} vs model {m.dims}")
    return float(gamma @ z) + float(mode_design(x, m, 0) @ m.factors[0].ravel(order="F"))
