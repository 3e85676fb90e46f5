"""Rank selection by BIC and penalty-level selection on a validation set."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .correlation import CorrKind
from .data import LongitudinalDataset
from .family import get_family
from .penalties import Penalty, PenaltyKind
from .simulation import prediction_metrics
from .solver import FitConfig, FitResult, fit, fit_independence_init

log = logging.getLogger(__name__)

# exceptions that mark a single candidate as failed rather than aborting the search
FIT_FAILURES = (ArithmeticError, ValueError, np.linalg.LinAlgError, RuntimeError)


def effective_params(dims, rank: int) -> int:
    """Identified parameter count of a rank-R CP model.

    R(p1 + p2) - R^2 for matrices, R(sum p_d - D + 1) otherwise. A vector
    covariate (D == 1) has no rank indeterminacy beyond its own length.
    """
    dims = [int(p) for p in dims]
    if rank < 1:
        raise ValueError("rank must be at least 1")
    if len(dims) == 1:
        return dims[0]
    if len(dims) == 2:
        return rank * sum(dims) - rank * rank
    return rank * (sum(dims) - len(dims) + 1)


@dataclass(frozen=True)
class BicValue:
    value: float
    loglik: float
    p_e: int
    converged: bool


def bic(data: LongitudinalDataset, result: FitResult, rank: int | None = None) -> BicValue:
    """-2 loglik + log(n) p_e at an independence-working-correlation fit.

    The Gaussian log-likelihood uses unit variance. Unconverged fits still
    get a value; ``converged`` carries the flag.
    """
    if result.wc.kind is not CorrKind.INDEPENDENCE:
        raise ValueError("BIC needs a fit under the independence working correlation")
    rank = result.rank if rank is None else rank
    theta, _ = result.predict(data)
    ll = get_family(result.family).loglik(data.y, theta)
    p_e = effective_params(result.dims, rank)
    if not result.converged:
        log.warning("BIC for rank %d uses an unconverged fit", rank)
    return BicValue(-2.0 * ll + math.log(data.n) * p_e, ll, p_e, bool(result.converged))


@dataclass
class RankSelection:
    candidates: list
    bic: dict
    p_e: dict
    converged: dict
    chosen: int
    failed: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for r in self.candidates:
            if r in self.failed:
                out.append({"rank": r, "p_e": self.p_e[r], "bic": math.nan,
                            "converged": False, "error": self.failed[r]})
            else:
                out.append({"rank": r, "p_e": self.p_e[r], "bic": self.bic[r],
                            "converged": self.converged[r], "error": ""})
        return out


def _rank_task(args):
    data, rank, family, seed, kwargs = args
    try:
        res = fit_independence_init(data, rank, family, seed, **kwargs)
        return bic(data, res, rank), None
    except FIT_FAILURES as exc:
        return None, f"{type(exc).__name__}: {exc}"


def select_rank(data: LongitudinalDataset, ranks, family="gaussian", seed: int = 0, *,
                jobs: int = 1, **fit_kwargs) -> RankSelection:
    """Fit each candidate rank under independence and keep the BIC minimizer.

    Every rank is initialized from the same seed. Ties go to the smaller
    rank; ranks whose fit raises are reported in ``failed``.
    """
    ranks = sorted({int(r) for r in ranks})
    if not ranks:
        raise ValueError("need at least one candidate rank")
    tasks = [(data, r, family, seed, fit_kwargs) for r in ranks]
    if jobs > 1 and len(ranks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_rank_task, tasks))
    else:
        results = [_rank_task(t) for t in tasks]
    values, p_e, conv, failed = {}, {}, {}, {}
    for r, (val, err) in zip(ranks, results):
        p_e[r] = effective_params(data.dims, r)
        if err is not None:
            log.warning("rank %d failed: %s", r, err)
            failed[r] = err
            continue
        values[r], conv[r] = val.value, val.converged
    if not values:
        raise RuntimeError("every candidate rank failed to fit")
    chosen = min(values, key=lambda r: (values[r], r))
    return RankSelection(ranks, values, p_e, conv, chosen, failed)


@dataclass
class LambdaSelection:
    grid: list
    metric: dict
    chosen: float
    metric_name: str
    failed: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict, repr=False)


def validation_metric(result: FitResult, valid: LongitudinalDataset) -> float:
    """RMSE for the Gaussian family, deviance otherwise."""
    theta, mu = result.predict(valid)
    if result.family.is_gaussian:
        return prediction_metrics(valid.y, mu)[0]
    return result.family.deviance(valid.y, theta)


def select_lambda(train: LongitudinalDataset, valid: LongitudinalDataset, grid,
                  cfg: FitConfig | None = None) -> LambdaSelection:
    """Fit on ``train`` for each level in ``grid``, score on ``valid``.

    The penalty kind comes from ``cfg`` (lasso when it has none). Ties go to
    the larger level.
    """
    cfg = cfg or FitConfig()
    grid = [float(v) for v in grid]
    if not grid:
        raise ValueError("lambda grid is empty")
    if any(v < 0 for v in grid):
        raise ValueError("lambda values must be non-negative")
    base = cfg.penalty if cfg.penalty.active else Penalty(PenaltyKind.LASSO)
    metric, failed, fits = {}, {}, {}
    for lam in grid:
        pen = replace(base, lam=lam)
        try:
            res = fit(train, replace(cfg, penalty=pen))
            metric[lam] = validation_metric(res, valid)
            fits[lam] = res
        except FIT_FAILURES as exc:
            log.warning("lambda %g failed: %s", lam, exc)
            failed[lam] = f"{type(exc).__name__}: {exc}"
    if not metric:
        raise RuntimeError("every lambda in the grid failed to fit")
    chosen = min(metric, key=lambda v: (metric[v], -v))
    name = "rmse" if cfg.family.is_gaussian else "deviance"
    return LambdaSelection(grid, metric, chosen, name, failed, fits)

