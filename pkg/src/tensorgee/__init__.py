"""Tensor generalized estimating equations for longitudinal array covariates."""

from .correlation import CorrKind, WorkingCorrelation
from .data import LongitudinalDataset, load_dataset, save_dataset
from .family import Family
from .penalties import Penalty, PenaltyKind
from .solver import FitConfig, FitResult, fit, fit_independence_init
from .tensor_core import CpModel, DenseTensor

__all__ = [
    "CorrKind", "CpModel", "DenseTensor", "Family", "FitConfig", "FitResult",
    "LongitudinalDataset", "Penalty", "PenaltyKind", "WorkingCorrelation", "fit",
    "fit_independence_init", "load_dataset", "save_dataset",
]

__version__ = "0.1.0"
