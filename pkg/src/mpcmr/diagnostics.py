"""Instrument diagnostics on per-variant summary statistics.

Per-variant associations with the component scores and with the outcome are
enough to reconstruct effect-consistency and instrument-strength checks:
a Sanderson-Windmeijer style conditional F for each regressor, an iterative
generalized Cochran Q for pleiotropy against the fitted effect curve, the
same machinery turned on the scores themselves as a strength check, a
fixed-weight IVW fit with multiplicative overdispersion, and the GMM
overidentification statistic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .basis import BasisSet, score_transform_matrix
from .errors import DataError
from .fpca import FpcaModel
from .gmm import CueFit
from .longdata import GenotypeMatrix, center_columns

__all__ = [
    "SummaryStats",
    "QResult",
    "IvwFit",
    "compute_summary_stats",
    "genetic_assoc_curve",
    "conditional_f",
    "cochran_q",
    "q_strength",
    "ivw_fit",
    "sargan",
]


@dataclass
class SummaryStats:
    """Univariable per-variant regression summaries on a shared sample.

    ``alpha[j, k]`` regresses score k on variant j alone; ``theta[j]`` does
    the same for the outcome. ``gamma_cross[j, k]`` estimates the sampling
    covariance between alpha[j, k] and theta[j] induced by sample overlap,
    zero when the two regressions come from disjoint samples.
    """

    variant_ids: list
    n: int
    alpha: np.ndarray
    alpha_se: np.ndarray
    theta: np.ndarray
    theta_se: np.ndarray
    gamma_cross: np.ndarray
    var_g: np.ndarray

    @property
    def n_variants(self) -> int:
        return int(self.theta.size)

    @property
    def n_components(self) -> int:
        return int(self.alpha.shape[1])


def _univariable(gc: np.ndarray, yc: np.ndarray):
    """All-variants-at-once simple regressions of yc on each column of gc."""
    n = gc.shape[0]
    var_g = np.mean(gc * gc, axis=0)
    cov = gc.T @ yc / n
    coef = cov / var_g
    rss = n * np.mean(yc * yc) - n * coef * cov
    dof = max(n - 2, 1)
    se = np.sqrt(np.maximum(rss, 0.0) / dof / (n * var_g))
    return coef, se, var_g


def compute_summary_stats(genotype, scores, outcome, n_shared=None) -> SummaryStats:
    """Per-variant summaries of scores and outcome with overlap correction.

    ``n_shared`` is the number of subjects common to the score and outcome
    regressions; it defaults to the full (one-sample) overlap and 0 turns the
    cross-covariance off. Residual moments use the population convention.
    """
    if isinstance(genotype, GenotypeMatrix):
        g_values = genotype.values
        variant_ids = list(genotype.variant_ids)
    else:
        g_values = np.asarray(genotype, dtype=float)
        variant_ids = [f"g{j + 1}" for j in range(g_values.shape[1])]
    gc = center_columns(g_values)
    sc = center_columns(np.asarray(scores, dtype=float))
    yc = np.asarray(outcome, dtype=float)
    yc = yc - yc.mean()
    n, J = gc.shape
    K = sc.shape[1]
    if sc.shape[0] != n or yc.shape[0] != n:
        raise DataError("genotype, scores and outcome disagree on n")
    if n_shared is None:
        n_shared = n
    if not 0 <= n_shared <= n:
        raise DataError("n_shared must lie in [0, n]")
    if J > 1:
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.corrcoef(gc, rowvar=False)
        off = np.abs(corr[np.triu_indices(J, k=1)])
        if off.size and np.nanmax(off) >= 0.2:
            warnings.warn(
                f"instruments are correlated (max |corr| = {np.nanmax(off):.2f}); "
                "per-variant summaries assume near-independence",
                RuntimeWarning,
                stacklevel=2,
            )

    alpha = np.empty((J, K))
    alpha_se = np.empty((J, K))
    for k in range(K):
        alpha[:, k], alpha_se[:, k], var_g = _univariable(gc, sc[:, k])
    theta, theta_se, var_g = _univariable(gc, yc)

    if n_shared == 0:
        gamma_cross = np.zeros((J, K))
    else:
        coef_s, *_ = np.linalg.lstsq(gc, sc, rcond=None)
        coef_y, *_ = np.linalg.lstsq(gc, yc, rcond=None)
        v_s = sc - gc @ coef_s
        v_y = yc - gc @ coef_y
        cross = v_s.T @ v_y / n  # K-vector of population covariances
        gamma_cross = (n_shared / (n * n)) * np.outer(1.0 / var_g, cross)
    return SummaryStats(
        variant_ids=variant_ids,
        n=n,
        alpha=alpha,
        alpha_se=alpha_se,
        theta=theta,
        theta_se=theta_se,
        gamma_cross=gamma_cross,
        var_g=var_g,
    )


def genetic_assoc_curve(stats: SummaryStats, model: FpcaModel) -> np.ndarray:
    """Per-variant exposure-association curves sum_k alpha[j,k] phi_k, J x G."""
    if stats.n_components != model.n_components:
        raise DataError("summary statistics and model disagree on components")
    return stats.alpha @ model.phi


def conditional_f(instruments, regressors) -> np.ndarray:
    """Conditional first-stage F for each regressor given the others.

    Regressor k is first purged of the instrument-predicted parts of the
    remaining regressors (their first-stage fitted values); the F statistic
    then compares the instrument-explained variation of the purged part
    against its unexplained variation, with L-1 fewer numerator degrees of
    freedom than a marginal first-stage F would have.
    """
    Z = center_columns(np.asarray(instruments, dtype=float))
    Xi = center_columns(np.asarray(regressors, dtype=float))
    n, J = Z.shape
    L = Xi.shape[1]
    if J < L:
        raise DataError(f"instruments do not identify {L} parameter(s)")
    if n <= J + 1:
        raise DataError("need more subjects than instruments")
    Q, _ = np.linalg.qr(Z, mode="reduced")

    def proj(v):
        return Q @ (Q.T @ v)

    out = np.empty(L)
    for k in range(L):
        x = Xi[:, k]
        if L > 1:
            Wp = proj(np.delete(Xi, k, axis=1))
            delta, *_ = np.linalg.lstsq(Wp, x, rcond=None)
            v = x - Wp @ delta
        else:
            v = x
        pv = proj(v)
        num = float(pv @ pv) / (J - L + 1)
        den = float(v @ v - pv @ pv) / (n - J - 1)
        out[k] = num / den
    return out


@dataclass
class QResult:
    statistic: float
    df: int
    pvalue: float
    gamma: np.ndarray
    n_iter: int
    floored: bool


def _iterative_q(theta, theta_se, X, bg_var_fn, df) -> QResult:
    """Generalized Cochran Q with effect-dependent denominators.

    ``X`` are the J x L linear predictors of theta; ``bg_var_fn(gamma)``
    returns the extra per-variant variance (and overlap correction) that the
    denominators pick up at a given gamma. Iterates WLS until the estimate
    stabilizes.
    """
    se2 = theta_se**2
    w0 = 1.0 / se2
    gamma = np.linalg.solve(X.T @ (X * w0[:, None]), X.T @ (theta * w0))
    floored = False
    n_iter = 0
    for n_iter in range(1, 101):
        d = se2 + bg_var_fn(gamma)
        lo = 1e-12 * se2
        if np.any(d < lo):
            d = np.maximum(d, lo)
            if not floored:
                warnings.warn("Q denominators floored; overlap correction is extreme")
            floored = True
        w = 1.0 / d
        new = np.linalg.solve(X.T @ (X * w[:, None]), X.T @ (theta * w))
        delta = float(np.linalg.norm(new - gamma))
        gamma = new
        if delta < 1e-8:
            break
    resid = theta - X @ gamma
    d = np.maximum(se2 + bg_var_fn(gamma), 1e-12 * se2)
    stat = float(np.sum(resid * resid / d))
    pvalue = float(chi2.sf(stat, df)) if df > 0 else float("nan")
    return QResult(statistic=stat, df=df, pvalue=pvalue, gamma=gamma,
                   n_iter=n_iter, floored=floored)


def cochran_q(stats: SummaryStats, basis: BasisSet, model: FpcaModel) -> QResult:
    """Heterogeneity of per-variant effects around a common effect curve.

    Under a correct curve each variant's theta should equal its score
    associations pushed through the basis transform; the Q statistic sums
    the squared deviations with denominators that account for the alpha
    sampling noise and the score-outcome overlap at the fitted gamma.
    """
    B = score_transform_matrix(basis, model)
    J = stats.n_variants
    L = B.shape[1]
    if J <= L:
        raise DataError("heterogeneity test needs more variants than parameters")
    X = stats.alpha @ B
    a_var = stats.alpha_se**2

    def bg_var(gamma):
        bg = B @ gamma
        return a_var @ (bg * bg) - 2.0 * stats.gamma_cross @ bg

    return _iterative_q(stats.theta, stats.theta_se, X, bg_var, df=J - L)


def q_strength(stats: SummaryStats) -> list:
    """Instrument-strength heterogeneity, one result per component.

    Component k plays the outcome role against the remaining components,
    with an identity transform and no overlap correction; a large statistic
    means the variants disagree about k's association pattern in a way the
    other components cannot absorb, evidence of component-specific signal.
    """
    K = stats.n_components
    J = stats.n_variants
    if K < 2:
        return []
    if J - (K - 1) < 1:
        raise DataError("strength test needs more variants than remaining components")
    out = []
    for k in range(K):
        others = np.delete(np.arange(K), k)
        X = stats.alpha[:, others]
        a_var = stats.alpha_se[:, others] ** 2

        def bg_var(gamma, a_var=a_var):
            return a_var @ (gamma * gamma)

        out.append(
            _iterative_q(stats.alpha[:, k], stats.alpha_se[:, k], X, bg_var,
                         df=J - (K - 1))
        )
    return out


@dataclass
class IvwFit:
    gamma: np.ndarray
    cov: np.ndarray
    tau2: float


def ivw_fit(stats: SummaryStats, basis: BasisSet, model: FpcaModel) -> IvwFit:
    """Inverse-variance weighted fit of the effect curve from summaries.

    Weights are fixed at 1/theta_se^2; the covariance is inflated by a
    multiplicative overdispersion factor floored at one.
    """
    B = score_transform_matrix(basis, model)
    J = stats.n_variants
    L = B.shape[1]
    if J <= L:
        raise DataError("IVW needs more variants than parameters")
    X = stats.alpha @ B
    w = 1.0 / stats.theta_se**2
    info = X.T @ (X * w[:, None])
    gamma = np.linalg.solve(info, X.T @ (stats.theta * w))
    resid = stats.theta - X @ gamma
    q_fixed = float(np.sum(resid * resid * w))
    tau2 = max(1.0, q_fixed / (J - L))
    cov = tau2 * np.linalg.inv(info)
    return IvwFit(gamma=gamma, cov=cov, tau2=tau2)


def sargan(fit: CueFit):
    """Overidentification statistic, degrees of freedom and p-value."""
    df = fit.overid_df
    p = float(chi2.sf(fit.objective, df)) if df > 0 else float("nan")
    return float(fit.objective), df, p
