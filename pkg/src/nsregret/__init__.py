"""Strongly-adaptive online learning for nonstationary comparators.

A library and CLI around three pieces: the FLH/AFLH meta-algorithm over
FTL/OGD/ONS base learners, the exact TV-constrained offline oracle for
squared losses (tolerance-certified for general smooth losses) with KKT
certificates, and the partition/decomposition diagnostics used to measure
dynamic-regret scaling.
"""

from .core import (ComparatorSequence, ConfigError, CurvatureParams, DecisionBox,
                   GlmLink, GlmLoss, LossBundle, NumericalError, RoundRecord,
                   SquaredLoss, eval_grad, eval_loss, glm_curvature,
                   squared_curvature, total_variation)
from .learners import FtlState, OgdState, OnsState, generalized_projection, ons_zeta
from .meta import (Expert, ExperimentTrace, FlhState, RunConfig, aflh_alive,
                   flh_predict, flh_update, run_protocol)
from .oracle import (KktReport, OracleSolution, brute_force_oracle, fused_lasso_1d,
                     kkt_extract, oracle_general_loss, tv_constrained_solve)
from .analysis import (DecompositionRow, Partition, build_partition, dynamic_regret,
                       fit_scaling_exponent, regret_decompose)
from .datagen import (NoiseSpec, LinearDualExample, SequenceProfile, gen_comparator,
                      gen_labels, gen_linear_dual_example)

__version__ = "0.1.0"

__all__ = [
    "ComparatorSequence", "ConfigError", "CurvatureParams", "DecisionBox",
    "GlmLink", "GlmLoss", "LossBundle", "NumericalError", "RoundRecord",
    "SquaredLoss", "eval_grad", "eval_loss", "glm_curvature", "squared_curvature",
    "total_variation",
    "FtlState", "OgdState", "OnsState", "generalized_projection", "ons_zeta",
    "Expert", "ExperimentTrace", "FlhState", "RunConfig", "aflh_alive", "flh_predict",
    "flh_update", "run_protocol",
    "KktReport", "OracleSolution", "brute_force_oracle", "fused_lasso_1d",
    "kkt_extract", "oracle_general_loss", "tv_constrained_solve",
    "DecompositionRow", "Partition", "build_partition", "dynamic_regret",
    "fit_scaling_exponent", "regret_decompose",
    "NoiseSpec", "LinearDualExample", "SequenceProfile", "gen_comparator",
    "gen_labels", "gen_linear_dual_example",
]
