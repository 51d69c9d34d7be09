"""Time-varying causal effect functions from sparse longitudinal exposures
and genetic instruments."""

from .basis import BasisSet, effect_curve, make_basis, transform_scores
from .diagnostics import (
    SummaryStats,
    cochran_q,
    compute_summary_stats,
    conditional_f,
    genetic_assoc_curve,
    ivw_fit,
    q_strength,
    sargan,
)
from .errors import DataError, MpcmrError, NumericalError
from .fpca import FpcaModel, TimeGrid, fit_fpca
from .gmm import CueFit, GmmProblem, cue_objective, fit_association, fit_cue, make_problem
from .longdata import (
    GenotypeMatrix,
    LongitudinalExposure,
    OutcomeVector,
    load_individual_data,
)
from .pipeline import MpcmrFit, fit_mpcmr
from .robust import LmBand, LmGrid, lm_confidence, lm_statistic
from .simgen import SimConfig, SimDataset, gen_dataset, true_effect_at
from .study import StudyResult, StudySpec, run_study

__version__ = "0.1.0"

__all__ = [
    "BasisSet",
    "CueFit",
    "DataError",
    "FpcaModel",
    "GenotypeMatrix",
    "GmmProblem",
    "LmBand",
    "LmGrid",
    "LongitudinalExposure",
    "MpcmrError",
    "MpcmrFit",
    "NumericalError",
    "OutcomeVector",
    "SimConfig",
    "SimDataset",
    "StudyResult",
    "StudySpec",
    "SummaryStats",
    "TimeGrid",
    "cochran_q",
    "compute_summary_stats",
    "conditional_f",
    "cue_objective",
    "effect_curve",
    "fit_association",
    "fit_cue",
    "fit_fpca",
    "fit_mpcmr",
    "gen_dataset",
    "genetic_assoc_curve",
    "ivw_fit",
    "lm_confidence",
    "lm_statistic",
    "load_individual_data",
    "make_basis",
    "make_problem",
    "q_strength",
    "run_study",
    "sargan",
    "transform_scores",
    "true_effect_at",
]
