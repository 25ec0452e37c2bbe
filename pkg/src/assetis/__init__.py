"""Importance-sampling p-values for the ASSET subset-search meta-analysis statistic."""

__version__ = "0.1.0"

from .conditional import (  # noqa: E402
    ConditionalProblem,
    TiltSolution,
    cgf,
    is_pvalue_conditional,
    mc_pvalue_conditional,
    range_pvalues_conditional,
    sample_tilted_genotypes,
    solve_tilt,
)
from .dlm import dlm_pvalue, dlm_pvalue_conditional  # noqa: E402
from .gaussian import (  # noqa: E402
    is_pvalue_independent,
    is_pvalue_overlapping,
    is_pvalue_process,
    is_pvalue_range,
    mc_pvalue_normal,
)
from .mc import Estimate, EfficiencyReport, accumulate, efficiency, rng_stream  # noqa: E402
from .model import (  # noqa: E402
    ExpressionMatrix,
    GenotypeModel,
    StudyDesign,
    conditional_weights,
    enumerate_subsets,
    subset_correlation,
    subset_statistic_independent,
    subset_statistic_overlapping,
)
