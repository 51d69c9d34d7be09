"""End-to-end fit: component extraction, score regression, robust bands."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .basis import BasisSet, effect_curve, make_basis, transform_scores
from .errors import DataError
from .fpca import FpcaModel, TimeGrid, fit_fpca
from .gmm import (
    AssociationFit,
    CueFit,
    GmmProblem,
    curve_standard_errors,
    fit_association,
    fit_cue,
    make_problem,
)
from .longdata import GenotypeMatrix, LongitudinalExposure, OutcomeVector
from .robust import LmBand, lm_confidence

__all__ = ["MpcmrFit", "fit_mpcmr", "association_from_model", "fit_frame"]


@dataclass
class MpcmrFit:
    """Everything a fitted pipeline produced, from scores to bands."""

    model: FpcaModel
    basis: BasisSet
    problem: GmmProblem
    cue: CueFit
    beta: np.ndarray
    se: np.ndarray
    band: LmBand | None

    @property
    def t(self) -> np.ndarray:
        return self.model.grid.points

    @property
    def gamma(self) -> np.ndarray:
        return self.cue.gamma

    @property
    def gmm_lo(self) -> np.ndarray:
        return self.beta - 1.96 * self.se

    @property
    def gmm_hi(self) -> np.ndarray:
        return self.beta + 1.96 * self.se


def _check_alignment(exposure, genotype, outcome) -> None:
    if list(exposure.subject_ids) != list(genotype.subject_ids) or list(
        exposure.subject_ids
    ) != list(outcome.subject_ids):
        raise DataError("exposure, genotype and outcome subjects are not aligned")


def fit_mpcmr(
    exposure: LongitudinalExposure,
    genotype: GenotypeMatrix,
    outcome: OutcomeVector,
    basis: str = "eigen",
    L: int | None = None,
    fve: float = 0.95,
    grid: TimeGrid | None = None,
    bandwidths="auto",
    max_components: int | None = None,
    robust_band: bool = True,
    lm_m: int = 41,
    lm_expand: bool = False,
    model: FpcaModel | None = None,
) -> MpcmrFit:
    """Fit the effect function by instrumented score regression.

    A pre-fitted ``model`` can be supplied to reuse one component extraction
    across several basis choices; otherwise FPCA runs here. ``L`` defaults
    to the number of retained components.
    """
    _check_alignment(exposure, genotype, outcome)
    if model is None:
        model = fit_fpca(
            exposure, grid=grid, fve_threshold=fve,
            bandwidths=bandwidths, max_components=max_components,
        )
    if L is None:
        L = model.n_components
    basis_set = make_basis(basis, L, model.grid, model)
    xi_star = transform_scores(model.scores, basis_set, model)
    problem = make_problem(genotype.values, xi_star, outcome.values)
    cue = fit_cue(problem)
    beta = effect_curve(cue.gamma, basis_set)
    se = curve_standard_errors(cue.cov, basis_set)
    band = None
    if robust_band:
        band = lm_confidence(problem, cue, basis_set, m=lm_m, expand=lm_expand)
    return MpcmrFit(
        model=model, basis=basis_set, problem=problem, cue=cue,
        beta=beta, se=se, band=band,
    )


def association_from_model(model: FpcaModel, basis_set: BasisSet, outcome_values) -> AssociationFit:
    """Observational comparator sharing the pipeline's scores and basis."""
    xi_star = transform_scores(model.scores, basis_set, model)
    return fit_association(xi_star, outcome_values, basis_set)


def fit_frame(fit: MpcmrFit, beta_true=None) -> pd.DataFrame:
    """Tabulate the fitted curve and bands on the analysis grid.

    Columns: t, beta_hat, se, gmm_lo, gmm_hi, then the score-test band and
    its boundary flags when one was computed, then beta_true when given.
    """
    frame = pd.DataFrame(
        {
            "t": fit.t,
            "beta_hat": fit.beta,
            "se": fit.se,
            "gmm_lo": fit.gmm_lo,
            "gmm_hi": fit.gmm_hi,
        }
    )
    if fit.band is not None:
        frame["lm_lo"] = fit.band.lo
        frame["lm_hi"] = fit.band.hi
        frame["lm_unbounded_lo"] = fit.band.unbounded_lo.astype(int)
        frame["lm_unbounded_hi"] = fit.band.unbounded_hi.astype(int)
    if beta_true is not None:
        frame["beta_true"] = np.asarray(beta_true, dtype=float)
    return frame
