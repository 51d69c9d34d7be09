"""Identification-robust score test and confidence bands.

The Kleibergen-type statistic replaces the moment Jacobian with its
projection orthogonalized against the moment vector, so its null chi-square
law with L degrees of freedom holds whether or not the instruments are
strong. Inverting the test over a gamma grid gives joint confidence sets
that stay honest when the ordinary GMM bands collapse.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .basis import BasisSet
from .errors import DataError, NumericalError
from .gmm import CueFit, GmmProblem

__all__ = ["LmGrid", "LmBand", "lm_statistic", "lm_confidence"]

_CHUNK = 65536


@dataclass
class LmGrid:
    """Cartesian candidate grid centered at the point estimate."""

    axes: tuple
    width: float

    def __post_init__(self) -> None:
        if any(ax.size < 11 for ax in self.axes):
            raise DataError("score-test grid needs at least 11 points per axis")

    @property
    def m(self) -> int:
        return int(self.axes[0].size)

    @property
    def shape(self) -> tuple:
        return tuple(ax.size for ax in self.axes)

    def candidates(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])


def _lm_batch(problem: GmmProblem, gammas: np.ndarray) -> np.ndarray:
    """Score statistics for a (C, L) block of candidates, O(1) each in n."""
    n = problem.n
    G = problem.g_y[None, :] - gammas @ problem.g_zx.T
    s2 = problem.yy - 2.0 * gammas @ problem.xy + np.einsum(
        "cl,lk,ck->c", gammas, problem.xx, gammas
    )
    e = problem.xy[None, :] - gammas @ problem.xx.T
    gt = G @ problem.s_inv_half
    gzx_t = problem.s_inv_half @ problem.g_zx
    safe = np.maximum(s2, 1e-300)
    Dt = -gzx_t[None, :, :] + gt[:, :, None] * (e / safe[:, None])[:, None, :]
    v = np.einsum("cj,cjl->cl", gt, Dt)
    M = np.einsum("cjl,cjk->clk", Dt, Dt)
    try:
        sol = np.linalg.solve(M, v[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        sol = np.einsum("clk,ck->cl", np.linalg.pinv(M), v)
    stat = n * np.einsum("cl,cl->c", v, sol) / safe
    stat[s2 <= 1e-300] = 0.0
    return stat


def lm_statistic(problem: GmmProblem, gamma0) -> float:
    """Score statistic at a hypothesized gamma; null law chi2 with L df."""
    gamma0 = np.asarray(gamma0, dtype=float)
    if gamma0.shape != (problem.n_params,):
        raise DataError(f"gamma0 must have length {problem.n_params}")
    s2 = problem.sigma2(gamma0)
    if s2 > 1e-300:
        e = problem.xy - problem.xx @ gamma0
        gt = problem.s_inv_half @ problem.gbar(gamma0)
        Dt = -problem.s_inv_half @ problem.g_zx + np.outer(gt, e) / s2
        if np.linalg.matrix_rank(Dt) < problem.n_params:
            raise NumericalError("robust statistic undefined at this point")
    return float(_lm_batch(problem, gamma0[None, :])[0])


@dataclass
class LmBand:
    """Pointwise envelope of effect curves over the accepted candidate set."""

    t: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    unbounded_lo: np.ndarray
    unbounded_hi: np.ndarray
    n_accepted: int
    lm_min: float
    gamma_min: np.ndarray
    level: float
    grid: LmGrid


def _evaluate_grid(problem: GmmProblem, grid: LmGrid):
    cands = grid.candidates()
    stats = np.empty(cands.shape[0])
    for start in range(0, cands.shape[0], _CHUNK):
        block = slice(start, start + _CHUNK)
        stats[block] = _lm_batch(problem, cands[block])
    return cands, stats


def _band_from_grid(problem, basis, grid, level):
    cands, stats = _evaluate_grid(problem, grid)
    crit = chi2.ppf(level, df=problem.n_params)
    accepted = stats <= crit
    k_min = int(np.argmin(stats))
    idx = np.column_stack(np.unravel_index(np.arange(cands.shape[0]), grid.shape))
    on_hull = np.any((idx == 0) | (idx == grid.m - 1), axis=1)

    t = basis.grid.points
    G = t.size
    if not np.any(accepted):
        nan = np.full(G, np.nan)
        return LmBand(
            t=t, lo=nan, hi=nan.copy(),
            unbounded_lo=np.ones(G, dtype=bool),
            unbounded_hi=np.ones(G, dtype=bool),
            n_accepted=0, lm_min=float(stats[k_min]),
            gamma_min=cands[k_min], level=level, grid=grid,
        )
    acc = cands[accepted]
    hull_acc = on_hull[accepted]
    curves = acc @ basis.matrix
    lo_idx = np.argmin(curves, axis=0)
    hi_idx = np.argmax(curves, axis=0)
    return LmBand(
        t=t,
        lo=curves[lo_idx, np.arange(G)],
        hi=curves[hi_idx, np.arange(G)],
        unbounded_lo=hull_acc[lo_idx],
        unbounded_hi=hull_acc[hi_idx],
        n_accepted=int(accepted.sum()),
        lm_min=float(stats[k_min]),
        gamma_min=cands[k_min],
        level=level,
        grid=grid,
    )


def lm_confidence(
    problem: GmmProblem,
    fit: CueFit,
    basis: BasisSet,
    m: int = 41,
    level: float = 0.95,
    width: float = 4.0,
    expand: bool = False,
) -> LmBand:
    """Invert the score test over a grid and envelope the effect curves.

    The grid spans gamma_hat +- width standard errors per coordinate with m
    points per axis; m is bumped to the next odd value so the point estimate
    itself is a candidate. Each t gets the min and max of b(t)' gamma over
    accepted candidates, with a flag when the extremal candidate sits on the
    grid boundary (the true set may continue beyond it). ``expand`` retries
    once with a doubled window if the set is empty or touches the boundary.
    """
    if not 0.0 < level < 1.0:
        raise DataError("level must lie in (0, 1)")
    if basis.L != problem.n_params:
        raise DataError("basis size does not match the fitted parameters")
    if m % 2 == 0:
        m += 1
    se = fit.se
    if np.any(se <= 0) or not np.all(np.isfinite(se)):
        raise DataError("cannot build grid: degenerate standard errors")

    def build(w):
        axes = tuple(
            fit.gamma[l] + np.linspace(-w, w, m) * se[l] for l in range(fit.n_params)
        )
        return LmGrid(axes=axes, width=w)

    band = _band_from_grid(problem, basis, build(width), level)
    needs_more = band.n_accepted == 0 or bool(
        np.any(band.unbounded_lo) or np.any(band.unbounded_hi)
    )
    if needs_more and expand:
        band = _band_from_grid(problem, basis, build(2.0 * width), level)
    if band.n_accepted == 0:
        warnings.warn(
            "score-test confidence set is empty at this grid resolution; "
            "the model may be rejected or the grid too coarse"
        )
    return band
