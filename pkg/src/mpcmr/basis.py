"""Effect-function bases and the score transform between them.

The causal effect function is modelled as beta(t) = b(t)' gamma for a small
basis b. Integrated-exposure moments against component scores then only
need the matrix of inner products between eigenfunctions and basis
functions, so switching basis is a linear reparametrization of the same
regression problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial

from .errors import DataError
from .fpca import FpcaModel, TimeGrid

__all__ = [
    "BasisSet",
    "make_basis",
    "score_transform_matrix",
    "transform_scores",
    "effect_curve",
    "poly_coefficients_in_t",
]


@dataclass
class BasisSet:
    """L basis functions tabulated on the analysis grid (rows = functions)."""

    kind: str
    grid: TimeGrid
    matrix: np.ndarray

    def __post_init__(self) -> None:
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.ndim != 2 or self.matrix.shape[0] < 1:
            raise DataError("basis matrix must be 2-D with at least one row")
        if self.matrix.shape[1] != self.grid.n_points:
            raise DataError("basis matrix does not match the grid length")
        if not np.isfinite(self.matrix).all():
            raise DataError("basis matrix contains non-finite values")

    @property
    def L(self) -> int:
        return int(self.matrix.shape[0])

    def evaluate(self, t) -> np.ndarray:
        """Basis values at arbitrary times within the window, shape L x len(t)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.kind == "poly":
            u = (t - self.grid.t_min) / (self.grid.t_max - self.grid.t_min)
            return np.vstack([u**l for l in range(self.L)])
        return np.vstack([np.interp(t, self.grid.points, row) for row in self.matrix])


def make_basis(kind: str, L: int, grid: TimeGrid, model: FpcaModel | None = None) -> BasisSet:
    """Construct an effect-function basis.

    "poly" uses monomials in rescaled time u = (t - t_min)/(t_max - t_min),
    degrees 0 through L-1, so coefficients stay well scaled on long windows.
    "eigen" reuses the first L fitted eigenfunctions and needs ``model``.
    """
    if L < 1:
        raise DataError("basis needs at least one function")
    if kind == "poly":
        u = (grid.points - grid.t_min) / (grid.t_max - grid.t_min)
        matrix = np.vstack([u**l for l in range(L)])
    elif kind == "eigen":
        if model is None:
            raise DataError("eigen basis requires a fitted model")
        if L > model.n_components:
            raise DataError(
                f"eigen basis with L={L} exceeds the {model.n_components} retained component(s)"
            )
        matrix = model.phi[:L].copy()
    else:
        raise DataError(f"unknown basis kind: {kind!r}")
    return BasisSet(kind=kind, grid=grid, matrix=matrix)


def score_transform_matrix(basis: BasisSet, model: FpcaModel) -> np.ndarray:
    """Trapezoid inner products <phi_k, b_l>, shape K x L."""
    if basis.grid.n_points != model.grid.n_points or not np.isclose(
        basis.grid.t_min, model.grid.t_min
    ) or not np.isclose(basis.grid.t_max, model.grid.t_max):
        raise DataError("basis and model grids differ")
    w = model.grid.trapz_weights
    return (model.phi * w[None, :]) @ basis.matrix.T


def transform_scores(scores: np.ndarray, basis: BasisSet, model: FpcaModel) -> np.ndarray:
    """Map component scores (n x K) to basis-integrated regressors (n x L)."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2 or scores.shape[1] != model.n_components:
        raise DataError("scores shape does not match the model")
    return scores @ score_transform_matrix(basis, model)


def effect_curve(gamma, basis: BasisSet) -> np.ndarray:
    """Evaluate beta(t) = b(t)' gamma on the basis grid."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (basis.L,):
        raise DataError(f"gamma must have length {basis.L}")
    return gamma @ basis.matrix


def poly_coefficients_in_t(gamma, basis: BasisSet) -> np.ndarray:
    """Rewrite a poly-basis fit as raw-time polynomial coefficients.

    The fit lives in rescaled time u; this converts sum_l gamma_l u^l into
    coefficients c with beta(t) = sum_l c_l t^l.
    """
    if basis.kind != "poly":
        raise DataError("coefficient conversion only applies to the poly basis")
    gamma = np.asarray(gamma, dtype=float)
    p = Polynomial(gamma, domain=[basis.grid.t_min, basis.grid.t_max], window=[0.0, 1.0])
    return p.convert(kind=Polynomial).coef
