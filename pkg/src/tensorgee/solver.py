"""Alternating block solver for tensor generalized estimating equations.

The coefficient tensor is kept in CP form. With all but one factor matrix
held fixed, the linear predictor is linear in the free block, so each block
step is an ordinary GEE (weighted least squares for the Gaussian family,
Fisher scoring otherwise). The vector coefficient ``gamma`` is its own block,
updated last in every sweep, and the working correlation is re-estimated from
Pearson residuals once per sweep.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .correlation import (CorrKind, WorkingCorrelation, estimate, inverse,
                          pearson_residuals)
from .data import LongitudinalDataset
from .family import Family, get_family
from .penalties import Penalty, PenaltyKind, coordinate_descent
from .tensor_core import CpModel, block_design, normalize, reconstruct, tensor_inner

log = logging.getLogger(__name__)

GAMMA = "gamma"
MAX_HALVINGS = 30


class FitError(RuntimeError):
    pass


class NumericalWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FitConfig:
    rank: int = 1
    family: Family = field(default_factory=Family)
    corr: CorrKind = CorrKind.EXCHANGEABLE
    penalty: Penalty = field(default_factory=Penalty)
    max_outer: int = 100
    tol: float | None = None
    seed: int = 0
    restarts: int = 1
    inner_tol: float = 1e-8
    max_inner: int = 25

    def __post_init__(self):
        object.__setattr__(self, "family", get_family(self.family))
        object.__setattr__(self, "corr", CorrKind(self.corr))
        if self.rank < 1:
            raise ValueError("rank must be at least 1")
        if self.max_outer < 1 or self.restarts < 1:
            raise ValueError("max_outer and restarts must be positive")
        if self.tol is None:
            object.__setattr__(self, "tol", 1e-4 if self.penalty.active else 1e-6)
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class FitResult:
    """Fitted tensor GEE.

    ``ee_norm`` is the max-norm of the estimating equations at the normalized
    estimate; for penalized fits it is the max-norm of the penalized
    subgradient optimality residual at the final iterate instead.
    """

    model: CpModel
    gamma: np.ndarray
    wc: WorkingCorrelation
    converged: bool
    outer_iters: int
    ee_norm: float
    objective_trace: list = field(default_factory=list)
    change_trace: list = field(default_factory=list)
    family: Family = field(default_factory=Family)
    penalty: Penalty = field(default_factory=Penalty)
    init_iters: int = 0

    @property
    def rank(self) -> int:
        return self.model.rank

    @property
    def dims(self) -> tuple[int, ...]:
        return self.model.dims

    def tensor(self) -> np.ndarray:
        return self.model.full()

    def predict(self, data: LongitudinalDataset) -> tuple[np.ndarray, np.ndarray]:
        """Linear predictor and fitted mean, both (n, m)."""
        if data.dims != self.model.dims:
            raise ValueError(f"model dims {self.model.dims} do not match data dims {data.dims}")
        if data.p0 != self.gamma.size:
            raise ValueError(f"model has {self.gamma.size} vector coefficients, data has {data.p0}")
        eta = linear_predictors(data, self.model, self.gamma)
        return eta, self.family.mean(eta)

    def to_dict(self) -> dict:
        wc = self.wc
        return {
            "dims": list(self.model.dims),
            "rank": self.model.rank,
            "family": self.family.name,
            "factors": [f.ravel(order="F").tolist() for f in self.model.factors],
            "gamma": self.gamma.tolist(),
            "corr": {"kind": wc.kind.value, "rho": wc.param, "matrix": wc.matrix.tolist(),
                     "clamped": wc.clamped},
            "penalty": {"kind": self.penalty.kind.value, "lambda": self.penalty.lam,
                        "enet_alpha": self.penalty.alpha, "scad_a": self.penalty.a},
            "converged": bool(self.converged),
            "outer_iters": int(self.outer_iters),
            "init_iters": int(self.init_iters),
            "ee_norm": float(self.ee_norm),
            "objective_trace": [float(v) for v in self.objective_trace],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        dims, rank = [int(p) for p in d["dims"]], int(d["rank"])
        model = CpModel(tuple(np.asarray(f, dtype=float).reshape(p, rank, order="F")
                              for f, p in zip(d["factors"], dims)))
        corr = d.get("corr", {"kind": "independence"})
        m = len(corr.get("matrix", [[1.0]]))
        wc = WorkingCorrelation(corr["kind"], np.asarray(corr.get("matrix", np.eye(m))),
                                corr.get("rho"), bool(corr.get("clamped", False)))
        pen = d.get("penalty", {})
        penalty = Penalty(pen.get("kind", "none"), float(pen.get("lambda", 0.0)),
                          float(pen.get("enet_alpha", 1.5)), float(pen.get("scad_a", 3.7)))
        return cls(model=model, gamma=np.asarray(d.get("gamma", []), dtype=float), wc=wc,
                   converged=bool(d.get("converged", False)),
                   outer_iters=int(d.get("outer_iters", 0)),
                   ee_norm=float(d.get("ee_norm", np.nan)),
                   objective_trace=list(d.get("objective_trace", [])),
                   family=get_family(d.get("family", "gaussian")), penalty=penalty,
                   init_iters=int(d.get("init_iters", 0)))


def linear_predictors(data: LongitudinalDataset, model: CpModel, gamma) -> np.ndarray:
    """theta_ij = gamma'Z_ij + <B, X_ij> for every observation, shape (n, m)."""
    if data.dims != model.dims:
        raise ValueError(f"model dims {model.dims} do not match data dims {data.dims}")
    theta = tensor_inner(data.x, model.full())
    if data.p0:
        theta = theta + data.z @ np.asarray(gamma, dtype=float)
    return theta


def init_factors(dims, rank: int, rng: np.random.Generator) -> CpModel:
    """Standard normal entries scaled by 1/sqrt(p_d R)."""
    return CpModel(tuple(rng.standard_normal((p, rank)) / np.sqrt(p * rank) for p in dims))


def _apply_rinv(w: np.ndarray, rinv: np.ndarray | None) -> np.ndarray:
    # w has subjects on axis 0 and time on axis 1
    if rinv is None:
        return w
    return np.einsum("jk,nk...->nj...", rinv, w)


def _is_identity(rinv: np.ndarray) -> bool:
    return np.array_equal(rinv, np.eye(rinv.shape[0]))


def _normal_equations(u, w, a_half, rinv):
    """H = sum_i S_i' R^-1 S_i and c = sum_i S_i' R^-1 w_i with S_i = A_i^1/2 U_i."""
    s = u if a_half is None else u * a_half[..., None]
    t = _apply_rinv(s, rinv)
    q = u.shape[-1]
    s2, t2 = s.reshape(-1, q), t.reshape(-1, q)
    return s2.T @ t2, t2.T @ w.ravel()


def solve_normal(h: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Solve H b = c for symmetric PSD H with a jitter fallback when singular."""
    dim = h.shape[0]
    if dim == 0:
        return np.zeros(0)
    try:
        factor = cho_factor(h, check_finite=False)
        piv = np.abs(np.diag(factor[0]))
        if np.all(np.isfinite(piv)) and piv.min() ** 2 > 1e-12 * piv.max() ** 2:
            return cho_solve(factor, c, check_finite=False)
    except LinAlgError:
        pass
    jitter = 1e-8 * np.trace(h) / dim
    if jitter > 0:
        warnings.warn(f"singular block normal matrix; adding jitter {jitter:.3g}",
                      NumericalWarning, stacklevel=2)
        try:
            factor = cho_factor(h + jitter * np.eye(dim), check_finite=False)
            return cho_solve(factor, c, check_finite=False)
        except LinAlgError:
            pass
    return np.linalg.lstsq(h, c, rcond=None)[0]


def _solve_block(u, offset, y, b0, rinv, family: Family, penalty: Penalty,
                 inner_tol: float, max_inner: int) -> np.ndarray:
    if family.is_gaussian:
        h, c = _normal_equations(u, y - offset, None, rinv)
        if penalty.active:
            return coordinate_descent(h, c, b0, penalty)
        return solve_normal(h, c)

    def scoring_terms(b):
        theta = offset + u @ b
        if not np.all(np.isfinite(theta)):
            raise FitError("non-finite linear predictor during Fisher scoring")
        a_half = np.sqrt(family.variance(theta))
        resid = (y - family.mean(theta)) / a_half
        return _normal_equations(u, resid, a_half, rinv)

    b = np.array(b0, dtype=float)
    h, score = scoring_terms(b)
    for _ in range(max_inner):
        if penalty.active:
            new = coordinate_descent(h, score + h @ b, b, penalty)
            h_new, score_new = scoring_terms(new)
        else:
            direction = solve_normal(h, score)
            # step-halving on the block score norm guards against overshooting
            base = np.linalg.norm(score)
            for _ in range(MAX_HALVINGS):
                new = b + direction
                h_new, score_new = scoring_terms(new)
                if np.linalg.norm(score_new) <= base:
                    break
                direction = direction / 2
        step = np.max(np.abs(new - b)) if b.size else 0.0
        b, h, score = new, h_new, score_new
        if step <= inner_tol * (1.0 + np.max(np.abs(b))):
            break
    return b


def block_update(data: LongitudinalDataset, model: CpModel, gamma, block, wc: WorkingCorrelation,
                 family="gaussian", penalty: Penalty | None = None, *, inner_tol: float = 1e-8,
                 max_inner: int = 25) -> np.ndarray:
    """Solve the sub-GEE for one block with everything else frozen.

    ``block`` is a 0-based mode index or ``"gamma"``. Returns the new factor
    matrix (p_d x R) or the new gamma vector. The penalty never applies to
    gamma.
    """
    family = get_family(family)
    penalty = penalty or Penalty()
    rinv = _rinv_or_none(wc)
    gamma = np.asarray(gamma, dtype=float)
    if block == GAMMA:
        u = data.z
        offset = tensor_inner(data.x, model.full())
        return _solve_block(u, offset, data.y, gamma, rinv, family, Penalty(), inner_tol, max_inner)
    u = block_design(data.x, model.factors, block)
    offset = data.z @ gamma if data.p0 else np.zeros_like(data.y)
    b0 = model.factors[block].ravel(order="F")
    b = _solve_block(u, offset, data.y, b0, rinv, family, penalty, inner_tol, max_inner)
    return b.reshape(model.factors[block].shape, order="F")


def ee_residual(data: LongitudinalDataset, model: CpModel, gamma, wc: WorkingCorrelation,
                family="gaussian") -> np.ndarray:
    """Left-hand side of the tensor estimating equations.

    Stacked as [vec(B_1) rows, ..., vec(B_D) rows, gamma rows], length
    R * sum(p_d) + p0.
    """
    family = get_family(family)
    if wc.m != data.m:
        raise ValueError(f"working correlation is {wc.m}x{wc.m} but data has m={data.m}")
    theta = linear_predictors(data, model, gamma)
    a_half = np.sqrt(family.variance(theta))
    v = a_half * _apply_rinv((data.y - family.mean(theta)) / a_half, inverse(wc))
    parts = []
    for d in range(model.ndim):
        u = block_design(data.x, model.factors, d)
        parts.append(u.reshape(-1, u.shape[-1]).T @ v.ravel())
    parts.append(data.z.reshape(-1, data.p0).T @ v.ravel())
    return np.concatenate(parts)


def _penalized_kkt(score_b: np.ndarray, beta: np.ndarray, penalty: Penalty) -> float:
    deriv = penalty.derivative(beta)
    nonzero = beta != 0
    r = np.where(nonzero, np.abs(score_b - deriv * np.sign(beta)),
                 np.maximum(np.abs(score_b) - deriv, 0.0))
    return float(np.max(r)) if r.size else 0.0


def quasi_objective(data, model, gamma, rinv, family: Family, penalty: Penalty,
                    theta: np.ndarray | None = None) -> float:
    """0.5 * sum_i e_i' R^-1 e_i over Pearson residuals, plus the penalty."""
    if theta is None:
        theta = linear_predictors(data, model, gamma)
    e = (data.y - family.mean(theta)) / np.sqrt(family.variance(theta))
    we = e if rinv is None else e @ rinv
    return float(0.5 * np.sum(e * we) + penalty.value(model.beta()))


def _state(model: CpModel, gamma) -> np.ndarray:
    return np.concatenate([reconstruct(model).values, np.asarray(gamma, dtype=float)])


def _rinv_or_none(wc: WorkingCorrelation):
    rinv = inverse(wc)
    return None if _is_identity(rinv) else rinv


def _alternate(data, model, gamma, wc, family, penalty, tol, max_outer, corr_kind,
               reestimate, inner_tol, max_inner):
    """Outer sweeps until the relative change of (vec B, gamma) drops below tol."""
    rinv = _rinv_or_none(wc)
    prev = _state(model, gamma)
    zg = data.z @ gamma if data.p0 else np.zeros_like(data.y)
    objective, changes = [], []
    converged, it = False, 0
    for it in range(1, max_outer + 1):
        for d in range(model.ndim):
            u = block_design(data.x, model.factors, d)
            b = _solve_block(u, zg, data.y, model.factors[d].ravel(order="F"), rinv,
                             family, penalty, inner_tol, max_inner)
            model = model.with_factor(d, b.reshape(model.factors[d].shape, order="F"))
        # the last design already carries every other factor: <B, X> = U_D vec(B_D)
        tb = u @ b
        if data.p0:
            gamma = _solve_block(data.z, tb, data.y, gamma, rinv, family, Penalty(),
                                 inner_tol, max_inner)
            zg = data.z @ gamma
        theta = tb + zg
        if not penalty.active:
            model = normalize(model)
        cur = _state(model, gamma)
        if not np.all(np.isfinite(cur)):
            raise FitError(f"non-finite parameters after sweep {it}")
        change = float(np.linalg.norm(cur - prev) / max(np.linalg.norm(prev), 1e-12))
        obj = quasi_objective(data, model, gamma, rinv, family, penalty, theta)
        if not np.isfinite(obj):
            raise FitError(f"non-finite objective after sweep {it}")
        objective.append(obj)
        changes.append(change)
        prev = cur
        log.debug("sweep %d: change %.3e objective %.6g", it, change, obj)
        if change < tol:
            converged = True
            break
        if reestimate:
            e = (data.y - family.mean(theta)) / np.sqrt(family.variance(theta))
            wc = estimate(corr_kind, e)
            rinv = _rinv_or_none(wc)
    return model, gamma, wc, converged, it, objective, changes


def _finish(data, model, gamma, wc, family, penalty, converged, iters, objective, changes,
            init_iters=0) -> FitResult:
    if penalty.active:
        s = ee_residual(data, model, gamma, wc, family)
        nb = model.beta().size
        ee = max(_penalized_kkt(s[:nb], model.beta(), penalty),
                 float(np.max(np.abs(s[nb:]))) if s.size > nb else 0.0)
        model = normalize(model)
    else:
        model = normalize(model)
        ee = float(np.max(np.abs(ee_residual(data, model, gamma, wc, family))))
    if not converged:
        log.warning("tensor GEE did not converge in %d sweeps", iters)
    return FitResult(model=model, gamma=np.asarray(gamma, dtype=float), wc=wc,
                     converged=converged, outer_iters=iters, ee_norm=ee,
                     objective_trace=objective, change_trace=changes, family=family,
                     penalty=penalty, init_iters=init_iters)


def _check_data(data: LongitudinalDataset) -> None:
    if data.n < 1 or data.m < 1:
        raise ValueError("dataset has no observations")
    if not (np.all(np.isfinite(data.y)) and np.all(np.isfinite(data.x))
            and np.all(np.isfinite(data.z))):
        raise ValueError("dataset contains non-finite values")


def _seeds(seed: int, restarts: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(restarts)]


def _init_one(data, rank, family, rng, tol, max_outer, inner_tol, max_inner):
    model = init_factors(data.dims, rank, rng)
    gamma = np.zeros(data.p0)
    wc = WorkingCorrelation.identity(data.m)
    return _alternate(data, model, gamma, wc, family, Penalty(), tol, max_outer,
                      CorrKind.INDEPENDENCE, False, inner_tol, max_inner)


def fit_independence_init(data: LongitudinalDataset, rank: int, family="gaussian", seed: int = 0,
                          *, tol: float = 1e-6, max_outer: int = 100, restarts: int = 1,
                          inner_tol: float = 1e-8, max_inner: int = 25) -> FitResult:
    """Tensor GEE under the independence working correlation.

    This is the customary initial estimator; with several restarts the one
    with the smallest estimating-equation norm is kept.
    """
    _check_data(data)
    family = get_family(family)
    best = None
    for rng in _seeds(seed, restarts):
        out = _init_one(data, rank, family, rng, tol, max_outer, inner_tol, max_inner)
        res = _finish(data, *out[:3], family, Penalty(), *out[3:])
        if best is None or res.ee_norm < best.ee_norm:
            best = res
    return best


def fit(data: LongitudinalDataset, cfg: FitConfig | None = None, *,
        init: FitResult | None = None, **kwargs) -> FitResult:
    """Full tensor GEE fit.

    Independence initial fit, moment estimate of the working correlation,
    then alternating sweeps with the correlation refreshed after each sweep,
    and finally CP normalization. A precomputed ``init`` (from
    ``fit_independence_init`` with the same rank) skips the first stage and
    the restarts.
    """
    cfg = cfg or FitConfig(**kwargs)
    _check_data(data)
    family, penalty = cfg.family, cfg.penalty
    if init is not None:
        if init.model.rank != cfg.rank or init.model.dims != data.dims:
            raise ValueError("initial fit does not match the requested rank or data dims")
        starts = [(init.model, init.gamma, init.outer_iters)]
    else:
        starts = []
        for rng in _seeds(cfg.seed, cfg.restarts):
            model, gamma, _, _, iters, _, _ = _init_one(
                data, cfg.rank, family, rng, cfg.tol, cfg.max_outer, cfg.inner_tol, cfg.max_inner)
            starts.append((model, gamma, iters))
    best = None
    for model, gamma, init_iters in starts:
        wc = estimate(cfg.corr, pearson_residuals(data, gamma, model, family))
        out = _alternate(data, model, gamma, wc, family, penalty, cfg.tol, cfg.max_outer,
                         cfg.corr, True, cfg.inner_tol, cfg.max_inner)
        res = _finish(data, *out[:3], family, penalty, *out[3:], init_iters=init_iters)
        if best is None or res.ee_norm < best.ee_norm:
            best = res
    return best
