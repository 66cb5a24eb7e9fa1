"""Temporally regularized evolving-factor models fitted by alternating ADMM,
with concept-drift benchmark generators and factor-recovery scoring."""

from .cmf import CmfFactors, CmfFitResult, fit_cmf, fms_cmf, objective_cmf
from .core import (
    Parafac2Factors,
    RegularizationConfig,
    TensorSlices,
    objective,
    parafac2_residual,
    reconstruct_slice,
)
from .evaluation import MatchReport, detect_degenerate, fms, select_best
from .kernels import AdmmState
from .solver import FitResult, SolverConfig, fit, init_uniform, initialize
from .synth import (
    DriftSpec,
    StrengthProfile,
    SyntheticConfig,
    almostzero_preset,
    drift_activity,
    easy_preset,
    generate,
    make_overlapping,
    overlap_preset,
)

__version__ = "0.1.0"

__all__ = [
    "TensorSlices",
    "Parafac2Factors",
    "RegularizationConfig",
    "reconstruct_slice",
    "objective",
    "parafac2_residual",
    "AdmmState",
    "SolverConfig",
    "FitResult",
    "fit",
    "init_uniform",
    "initialize",
    "CmfFactors",
    "CmfFitResult",
    "fit_cmf",
    "objective_cmf",
    "fms_cmf",
    "MatchReport",
    "fms",
    "detect_degenerate",
    "select_best",
    "SyntheticConfig",
    "DriftSpec",
    "StrengthProfile",
    "generate",
    "drift_activity",
    "easy_preset",
    "almostzero_preset",
    "overlap_preset",
    "make_overlapping",
    "__version__",
]
