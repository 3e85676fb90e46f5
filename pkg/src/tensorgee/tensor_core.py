"""Dense tensor algebra used throughout the package.

Tensors are stored column-major (first index varies fastest), so ``vec`` is a
plain Fortran-order ravel and mode-0 matricization is a reshape. Modes are
0-based in this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from string import ascii_letters
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class DenseTensor:
    """D-way array with explicit dims and column-major ``values``."""

    dims: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        dims = tuple(int(p) for p in self.dims)
        if not dims or any(p < 1 for p in dims):
            raise ValueError(f"dims must be non-empty positive integers, got {self.dims}")
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size != int(np.prod(dims)):
            raise ValueError(f"{values.size} values do not fill dims {dims}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, arr) -> "DenseTensor":
        arr = np.asarray(arr, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        return cls(arr.shape, arr.ravel(order="F"))

    def to_array(self) -> np.ndarray:
        return self.values.reshape(self.dims, order="F")

    @property
    def ndim(self) -> int:
        return len(self.dims)


@dataclass(frozen=True)
class CpModel:
    """Rank-R CP factors ``B_1, ..., B_D``; ``factors[d]`` has shape (p_d, R)."""

    factors: tuple[np.ndarray, ...]

    def __post_init__(self):
        factors = tuple(np.array(f, dtype=float, ndmin=2) for f in self.factors)
        if not factors:
            raise ValueError("CpModel needs at least one factor matrix")
        ranks = {f.shape[1] for f in factors}
        if len(ranks) != 1 or 0 in ranks:
            raise ValueError(f"factor column counts disagree: {[f.shape for f in factors]}")
        object.__setattr__(self, "factors", factors)

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def ndim(self) -> int:
        return len(self.factors)

    def beta(self) -> np.ndarray:
        """Stacked parameter vector vec(B_1, ..., B_D)."""
        return np.concatenate([f.ravel(order="F") for f in self.factors])

    @classmethod
    def from_beta(cls, beta, dims: Sequence[int], rank: int) -> "CpModel":
        beta = np.asarray(beta, dtype=float)
        sizes = [p * rank for p in dims]
        if beta.size != sum(sizes):
            raise ValueError(f"beta has length {beta.size}, expected {sum(sizes)}")
        parts = np.split(beta, np.cumsum(sizes)[:-1])
        return cls(tuple(v.reshape(p, rank, order="F") for v, p in zip(parts, dims)))

    def with_factor(self, d: int, value) -> "CpModel":
        factors = list(self.factors)
        factors[d] = np.asarray(value, dtype=float).reshape(self.factors[d].shape)
        return CpModel(tuple(factors))

    def full(self) -> np.ndarray:
        """Coefficient tensor as a naturally indexed ndarray."""
        return reconstruct(self).to_array()


def _check_mode(d: int, ndim: int) -> None:
    if not 0 <= d < ndim:
        raise ValueError(f"mode {d} out of range for a {ndim}-way tensor")


def vec(t: DenseTensor) -> np.ndarray:
    return t.values.copy()


def inner(a: DenseTensor, b: DenseTensor) -> float:
    if a.dims != b.dims:
        raise ValueError(f"dimension mismatch: {a.dims} vs {b.dims}")
    return float(np.dot(a.values, b.values))


def outer(*vectors) -> DenseTensor:
    """Outer product b_1 o b_2 o ... o b_D."""
    vs = [np.asarray(v, dtype=float).ravel() for v in vectors]
    arr = reduce(np.multiply.outer, vs)
    return DenseTensor.from_array(arr)


def matricize(t: DenseTensor, d: int) -> np.ndarray:
    """Mode-d unfolding, shape (p_d, prod of the other dims).

    The remaining modes are laid out along the columns in increasing order
    with the earliest varying fastest.
    """
    _check_mode(d, t.ndim)
    arr = np.moveaxis(t.to_array(), d, 0)
    return arr.reshape(t.dims[d], -1, order="F")


def khatri_rao(a, b) -> np.ndarray:
    """Column-wise Kronecker product; column r is kron(a[:, r], b[:, r])."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"column mismatch: {a.shape[1]} vs {b.shape[1]}")
    return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def khatri_rao_chain(factors: Sequence[np.ndarray], skip: int | None = None) -> np.ndarray:
    """B_D ⊙ ... ⊙ B_1 over ``factors`` given in natural order, optionally omitting one.

    With every factor skipped (D == 1) the result is a 1 x R row of ones.
    """
    kept = [f for d, f in enumerate(factors) if d != skip]
    rank = factors[0].shape[1]
    if not kept:
        return np.ones((1, rank))
    return reduce(khatri_rao, reversed(kept))


def reconstruct(m: CpModel) -> DenseTensor:
    values = khatri_rao_chain(m.factors) @ np.ones(m.rank)
    return DenseTensor(m.dims, values)


def mode_design(x: DenseTensor, m: CpModel, d: int) -> np.ndarray:
    """Design row for the block-d sub-problem: vec(X_(d) · KR_{-d}).

    Satisfies ``mode_design(x, m, d) @ vec(B_d) == inner(reconstruct(m), x)``.
    """
    if x.dims != m.dims:
        raise ValueError(f"dimension mismatch: tensor {x.dims} vs model {m.dims}")
    _check_mode(d, m.ndim)
    return (matricize(x, d) @ khatri_rao_chain(m.factors, skip=d)).ravel(order="F")


def perm_map(dims: Sequence[int], d: int) -> np.ndarray:
    """Index form of the permutation with vec(t) = P_d vec(t_(d)).

    Returns ``pi`` (0-based) such that ``vec(t)[pi[k]] == vec(matricize(t, d))[k]``.
    """
    dims = tuple(int(p) for p in dims)
    _check_mode(d, len(dims))
    index = DenseTensor(dims, np.arange(int(np.prod(dims)), dtype=float))
    return matricize(index, d).ravel(order="F").astype(np.intp)


def apply_perm(pi: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Scatter ``v`` through ``pi``: out[pi[k]] = v[k]."""
    out = np.empty_like(np.asarray(v, dtype=float))
    out[pi] = v
    return out


def normalize(m: CpModel) -> CpModel:
    """Fix CP scale and sign.

    Columns of B_1..B_{D-1} get unit norm with their largest-magnitude entry
    positive; magnitudes and signs move into B_D. Components with a zero
    column anywhere are set to zero in every factor.
    """
    factors = [f.copy() for f in m.factors]
    last = factors[-1]
    for r in range(m.rank):
        if any(not np.any(f[:, r]) for f in factors):
            for f in factors:
                f[:, r] = 0.0
            continue
        scale = 1.0
        for f in factors[:-1]:
            col = f[:, r]
            norm = np.linalg.norm(col)
            sign = 1.0 if col[np.argmax(np.abs(col))] > 0 else -1.0
            f[:, r] = col * (sign / norm)
            scale *= sign * norm
        last[:, r] *= scale
    return CpModel(tuple(factors))


def normalize_jacobian(m: CpModel) -> np.ndarray:
    """Jacobian of ``normalize`` with respect to beta, evaluated at ``m``.

    Signs are treated as locally constant. At an already-normalized model
    this is the projection that removes the per-component scale freedom.
    """
    dims, rank = m.dims, m.rank
    offsets = np.concatenate([[0], np.cumsum([p * rank for p in dims])])
    jac = np.zeros((offsets[-1], offsets[-1]))

    def idx(d, r):
        return offsets[d] + r * dims[d] + np.arange(dims[d])

    last = m.ndim - 1
    for r in range(rank):
        cols = [f[:, r] for f in m.factors]
        norms = [np.linalg.norm(c) for c in cols[:-1]]
        if any(not np.any(c) for c in cols):
            continue
        signs = [1.0 if c[np.argmax(np.abs(c))] > 0 else -1.0 for c in cols[:-1]]
        scale = float(np.prod([s * n for s, n in zip(signs, norms)]))
        for d in range(last):
            u = cols[d] / norms[d]
            jac[np.ix_(idx(d, r), idx(d, r))] = signs[d] * (np.eye(dims[d]) - np.outer(u, u)) / norms[d]
            jac[np.ix_(idx(last, r), idx(d, r))] = scale * np.outer(cols[-1], cols[d]) / norms[d] ** 2
        jac[np.ix_(idx(last, r), idx(last, r))] = scale * np.eye(dims[last])
    return jac


def block_design(x: np.ndarray, factors: Sequence[np.ndarray], d: int) -> np.ndarray:
    """Batched ``mode_design`` over leading axes.

    ``x`` has shape (*batch, p_1, ..., p_D) in natural indexing; the result has
    shape (*batch, p_d * R) ordered like vec(B_d).
    """
    ndim = len(factors)
    _check_mode(d, ndim)
    nbatch = x.ndim - ndim
    if tuple(x.shape[nbatch:]) != tuple(f.shape[0] for f in factors):
        raise ValueError(f"covariate dims {x.shape[nbatch:]} do not match factor dims")
    rank = factors[0].shape[1]
    if ndim == 1:
        return np.tile(x, (1,) * (x.ndim - 1) + (rank,))
    if ndim == 2:
        # matmul paths are several times faster than einsum here
        if d == 0:
            out = np.swapaxes(x @ factors[1], -1, -2)
        else:
            out = np.matmul(factors[0].T, x)
        return out.reshape(x.shape[:nbatch] + (rank * factors[d].shape[0],))
    modes, comp = ascii_letters[:ndim], ascii_letters[ndim]
    operands = [x]
    subs = ["..." + modes]
    for k, f in enumerate(factors):
        if k != d:
            operands.append(f)
            subs.append(modes[k] + comp)
    spec = ",".join(subs) + "->..." + comp + modes[d]
    out = np.einsum(spec, *operands, optimize=True)
    return out.reshape(x.shape[:nbatch] + (rank * factors[d].shape[0],))


def tensor_inner(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """<B, X> over the trailing axes of a batched covariate array."""
    return np.tensordot(x, b, axes=b.ndim)
