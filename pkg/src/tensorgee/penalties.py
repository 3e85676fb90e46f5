"""Separable penalties and the cyclic coordinate-descent solver used by the
penalized block updates.

Every block problem is put in the quadratic form

    f(b) = 0.5 * b'Hb - c'b + sum_k P(|b_k|)

with H the (whitened) Gram matrix of the block design, which is what the
penalized weighted least squares problem reduces to after transforming each
subject by the Cholesky factor of its inverse working covariance.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class PenaltyKind(str, Enum):
    NONE = "none"
    LASSO = "lasso"
    RIDGE = "ridge"
    ENET = "enet"
    SCAD = "scad"


@dataclass(frozen=True)
class Penalty:
    """Penalty family with tuning level ``lam``.

    enet: lam * ((alpha - 1) b^2 / 2 + (2 - alpha) |b|), alpha in [1, 2].
    scad: derivative lam * {1(|b| <= lam) + (a lam - |b|)_+ / ((a - 1) lam) 1(|b| > lam)}, a > 2.
    ridge: lam * b^2.
    """

    kind: PenaltyKind = PenaltyKind.NONE
    lam: float = 0.0
    alpha: float = 1.5
    a: float = 3.7

    def __post_init__(self):
        object.__setattr__(self, "kind", PenaltyKind(self.kind))
        if self.lam < 0:
            raise ValueError("penalty level must be non-negative")
        if self.kind is PenaltyKind.NONE and self.lam > 0:
            raise ValueError("penalty 'none' cannot take a positive level")
        if self.kind is PenaltyKind.ENET and not 1.0 <= self.alpha <= 2.0:
            raise ValueError("elastic-net alpha must lie in [1, 2]")
        if self.kind is PenaltyKind.SCAD and not self.a > 2.0:
            raise ValueError("SCAD a must exceed 2")

    @property
    def active(self) -> bool:
        return self.kind is not PenaltyKind.NONE

    def value(self, b) -> float:
        t = np.abs(np.asarray(b, dtype=float))
        lam = self.lam
        if self.kind is PenaltyKind.NONE or lam == 0:
            return 0.0
        if self.kind is PenaltyKind.LASSO:
            return float(lam * t.sum())
        if self.kind is PenaltyKind.RIDGE:
            return float(lam * np.sum(t ** 2))
        if self.kind is PenaltyKind.ENET:
            return float(lam * np.sum((self.alpha - 1) * t ** 2 / 2 + (2 - self.alpha) * t))
        a = self.a
        inner = lam * t
        middle = (2 * a * lam * t - t ** 2 - lam ** 2) / (2 * (a - 1))
        outer = np.full_like(t, lam ** 2 * (a + 1) / 2)
        return float(np.sum(np.where(t <= lam, inner, np.where(t <= a * lam, middle, outer))))

    def derivative(self, t) -> np.ndarray:
        """dP/d|b| at |b| = t (right derivative at 0)."""
        t = np.abs(np.asarray(t, dtype=float))
        lam = self.lam
        if self.kind is PenaltyKind.NONE or lam == 0:
            return np.zeros_like(t)
        if self.kind is PenaltyKind.LASSO:
            return np.full_like(t, lam)
        if self.kind is PenaltyKind.RIDGE:
            return 2 * lam * t
        if self.kind is PenaltyKind.ENET:
            return lam * ((self.alpha - 1) * t + (2 - self.alpha))
        a = self.a
        return np.where(t <= lam, lam, np.maximum(a * lam - t, 0.0) / (a - 1))

    def coordinate_min(self, z: float, v: float) -> float:
        """argmin_b 0.5 v b^2 - z b + P(|b|)."""
        lam = self.lam
        if v <= 0:
            # Flat direction: the penalty alone decides, zero is a minimizer.
            return 0.0
        kind = self.kind
        if kind is PenaltyKind.NONE or lam == 0:
            return z / v
        if kind is PenaltyKind.LASSO:
            return _soft(z, lam) / v
        if kind is PenaltyKind.RIDGE:
            return z / (v + 2 * lam)
        if kind is PenaltyKind.ENET:
            return _soft(z, lam * (2 - self.alpha)) / (v + lam * (self.alpha - 1))
        return self._scad_min(z, v)

    def _scad_min(self, z: float, v: float) -> float:
        lam, a = self.lam, self.a
        s = 1.0 if z >= 0 else -1.0
        az = abs(z)
        # One stationary point per piece, clipped to its piece; the concave
        # middle piece (when (a - 1) v <= 1) is covered by its endpoints.
        candidates = [0.0, min(_soft(az, lam) / v, lam), lam, a * lam, max(az / v, a * lam)]
        denom = (a - 1) * v - 1
        if denom > 0:
            mid = (az * (a - 1) - a * lam) / denom
            candidates.append(min(max(mid, lam), a * lam))
        best = min(candidates, key=lambda t: 0.5 * v * t * t - az * t + self.value(t))
        return s * best


def _soft(z: float, t: float) -> float:
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def quadratic_objective(h: np.ndarray, c: np.ndarray, b: np.ndarray, penalty: Penalty) -> float:
    return float(0.5 * b @ h @ b - c @ b + penalty.value(b))


def coordinate_descent(h, c, b0, penalty: Penalty, tol: float = 1e-12, max_sweeps: int = 10000,
                       trace: list | None = None) -> np.ndarray:
    """Cyclic coordinate descent on the penalized quadratic.

    Each coordinate step is an exact minimization, so the objective is
    non-increasing across sweeps. ``trace`` (if given) receives the objective
    after every sweep.
    """
    h = np.asarray(h, dtype=float)
    c = np.asarray(c, dtype=float)
    b = np.array(b0, dtype=float)
    grad = c - h @ b
    diag = np.diag(h).copy()
    scale = max(1.0, float(np.max(np.abs(b))) if b.size else 1.0)
    if trace is not None:
        trace.append(quadratic_objective(h, c, b, penalty))
    for _ in range(max_sweeps):
        max_step = 0.0
        for k in range(b.size):
            old = b[k]
            new = penalty.coordinate_min(grad[k] + diag[k] * old, diag[k])
            step = new - old
            if step != 0.0:
                b[k] = new
                grad -= h[:, k] * step
                max_step = max(max_step, abs(step))
        if trace is not None:
            trace.append(quadratic_objective(h, c, b, penalty))
        scale = max(scale, float(np.max(np.abs(b))) if b.size else 1.0)
        if max_step <= tol * scale:
            break
    return b
