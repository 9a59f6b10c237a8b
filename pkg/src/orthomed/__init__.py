"""Uniformly valid post-selection inference for high-dimensional median regression."""

__version__ = "0.1.0"

from .data import PenaltyWeights, RngStream, Sample, column_loadings, sign_score  # noqa: E402
from .lasso import LassoFit, iterated_lasso, post_lasso, solve_lasso  # noqa: E402
from .ortho import (Algorithm, InferenceResult, OrthoConfig, double_selection,  # noqa: E402
                    minimize_score, run_algorithm, score_region, score_statistic)
from .qr_l1 import LadFit, lad_refit, pivotal_penalty_median, solve_l1_median  # noqa: E402
from .variance import VarianceEstimate, estimate_variance  # noqa: E402
from .multi import (fit_all_targets, multiplier_bootstrap, simultaneous_bands,  # noqa: E402
                    TargetEstimates)
from .simulation import DesignSpec, ManyTargetDesign, run_grid, summarize  # noqa: E402
from .estimators import (HeteroscedasticLasso, L1MedianRegressor,  # noqa: E402
                         ManyTargetMedianInference, OrthogonalMedianRegression)

__all__ = [
    "Algorithm", "InferenceResult", "LadFit", "LassoFit", "OrthoConfig",
    "PenaltyWeights", "RngStream", "Sample", "column_loadings", "double_selection",
    "iterated_lasso", "lad_refit", "minimize_score", "pivotal_penalty_median",
    "post_lasso", "run_algorithm", "score_region", "score_statistic", "sign_score",
    "solve_l1_median", "solve_lasso", "VarianceEstimate", "estimate_variance",
    "fit_all_targets", "multiplier_bootstrap", "simultaneous_bands", "TargetEstimates",
    "DesignSpec", "ManyTargetDesign", "run_grid", "summarize", "HeteroscedasticLasso",
    "L1MedianRegressor", "ManyTargetMedianInference", "OrthogonalMedianRegression",
]
