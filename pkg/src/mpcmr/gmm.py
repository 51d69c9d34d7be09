"""Continuously updating GMM for the basis-transformed score regression.

With centered instruments Z, centered integrated-exposure regressors Xi and
centered outcome Y, the moment function is g(gamma) = Z'(Y - Xi gamma)/n and
the weight matrix is the homoskedastic one Omega(gamma) = (Z'Z/n) sigma2(gamma)
recomputed continuously at the candidate point. Everything the objective
needs reduces to fixed second-moment blocks, so each evaluation is O(J^2)
regardless of sample size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .basis import BasisSet, effect_curve
from .errors import DataError, NumericalError
from .fpca import FpcaModel
from .longdata import center_columns

__all__ = [
    "GmmProblem",
    "CueFit",
    "make_problem",
    "moment_fn",
    "cue_objective",
    "fit_cue",
    "curve_standard_errors",
    "AssociationFit",
    "fit_association",
]


@dataclass
class GmmProblem:
    """Centered data plus every second moment the estimators reuse.

    Blocks: s_zz = Z'Z/n, g_y = Z'Y/n, g_zx = Z'Xi/n, xx = Xi'Xi/n,
    xy = Xi'Y/n, yy = Y'Y/n. ``s_inv_half`` is the symmetric inverse square
    root of s_zz, shared by the objective and the score-type test.
    """

    Z: np.ndarray
    Xi: np.ndarray
    Y: np.ndarray
    s_zz: np.ndarray = field(init=False, repr=False)
    g_y: np.ndarray = field(init=False, repr=False)
    g_zx: np.ndarray = field(init=False, repr=False)
    xx: np.ndarray = field(init=False, repr=False)
    xy: np.ndarray = field(init=False, repr=False)
    yy: float = field(init=False, repr=False)
    s_inv_half: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n = self.Z.shape[0]
        if self.Xi.shape[0] != n or self.Y.shape[0] != n:
            raise DataError("instruments, regressors and outcome disagree on n")
        if self.Xi.ndim != 2 or self.Z.ndim != 2 or self.Y.ndim != 1:
            raise DataError("Z and Xi must be 2-D, Y 1-D")
        if n <= self.Z.shape[1]:
            raise DataError("need more subjects than instruments")
        self.s_zz = self.Z.T @ self.Z / n
        self.g_y = self.Z.T @ self.Y / n
        self.g_zx = self.Z.T @ self.Xi / n
        self.xx = self.Xi.T @ self.Xi / n
        self.xy = self.Xi.T @ self.Y / n
        self.yy = float(self.Y @ self.Y) / n
        evals, vecs = np.linalg.eigh(self.s_zz)
        if evals[0] <= 1e-12 * evals[-1]:
            raise NumericalError("instrument second-moment matrix is singular")
        self.s_inv_half = (vecs / np.sqrt(evals)[None, :]) @ vecs.T

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def n_instruments(self) -> int:
        return self.Z.shape[1]

    @property
    def n_params(self) -> int:
        return self.Xi.shape[1]

    def gbar(self, gamma: np.ndarray) -> np.ndarray:
        return self.g_y - self.g_zx @ gamma

    def sigma2(self, gamma: np.ndarray) -> float:
        return float(self.yy - 2.0 * gamma @ self.xy + gamma @ self.xx @ gamma)

    def score_cross(self, gamma: np.ndarray) -> np.ndarray:
        """E_n[Xi u(gamma)], the regressor-residual cross moment."""
        return self.xy - self.xx @ gamma


def make_problem(instruments, regressors, outcome) -> GmmProblem:
    """Center all three blocks and bundle them for estimation."""
    Z = center_columns(np.asarray(instruments, dtype=float))
    Xi = center_columns(np.asarray(regressors, dtype=float))
    Y = np.asarray(outcome, dtype=float)
    if Y.ndim != 1:
        raise DataError("outcome must be a vector")
    Y = Y - Y.mean()
    if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(Xi)) and np.all(np.isfinite(Y))):
        raise DataError("non-finite values in estimation inputs")
    return GmmProblem(Z=Z, Xi=Xi, Y=Y)


def moment_fn(problem: GmmProblem, gamma) -> np.ndarray:
    """Sample moment vector Z'(Y - Xi gamma)/n."""
    gamma = np.asarray(gamma, dtype=float)
    return problem.gbar(gamma)


def cue_objective(problem: GmmProblem, gamma) -> float:
    """n g' Omega^{-1} g at the continuously updated weight."""
    gamma = np.asarray(gamma, dtype=float)
    g = problem.gbar(gamma)
    s2 = problem.sigma2(gamma)
    if s2 <= 0:
        return 0.0
    gt = problem.s_inv_half @ g
    return problem.n * float(gt @ gt) / s2


def _cue_value_grad(problem: GmmProblem, gamma):
    g = problem.gbar(gamma)
    s2 = problem.sigma2(gamma)
    gt = problem.s_inv_half @ g
    q = float(gt @ gt)
    sinv_g = problem.s_inv_half @ gt
    m = problem.score_cross(gamma)
    value = problem.n * q / s2
    grad = problem.n * (-2.0 * (problem.g_zx.T @ sinv_g) / s2 + 2.0 * q * m / s2**2)
    return value, grad


@dataclass
class CueFit:
    """Point estimate, sandwich-free GMM covariance and overid statistic."""

    gamma: np.ndarray
    cov: np.ndarray
    objective: float
    n_obs: int
    n_instruments: int
    n_params: int

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    @property
    def overid_df(self) -> int:
        return self.n_instruments - self.n_params


def _tsls(problem: GmmProblem) -> np.ndarray:
    a = problem.s_inv_half @ problem.g_zx
    b = problem.s_inv_half @ problem.g_y
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    return sol


def fit_cue(problem: GmmProblem, init=None) -> CueFit:
    """Minimize the continuously updated objective.

    Starts from the two-stage estimate (or ``init``), runs BFGS with the
    analytic gradient, and falls back to restarted Nelder-Mead plus a BFGS
    polish when the gradient fails to vanish. The covariance is the usual
    GMM one at the optimum with Jacobian -Z'Xi/n.
    """
    J, L = problem.n_instruments, problem.n_params
    if J < L:
        raise DataError(f"instruments do not identify {L} parameter(s)")
    x0 = np.asarray(init, dtype=float) if init is not None else _tsls(problem)
    if x0.shape != (L,):
        raise DataError(f"init must have length {L}")

    def fun(g):
        return _cue_value_grad(problem, g)

    res = minimize(fun, x0, jac=True, method="BFGS",
                   options={"gtol": 1e-8, "maxiter": 500})
    best_x, best_f = res.x, float(res.fun)
    grad_norm = float(np.max(np.abs(res.jac)))

    # a residual variance at rounding-noise level means the model fits the
    # outcome exactly; the gradient there is 0/0 noise and proves nothing
    noise_floor = 1e-12 * max(problem.yy, np.finfo(float).tiny)

    # the objective and its gradient both carry a factor n, so stationarity
    # is judged relative to the objective's own scale
    if grad_norm > 1e-6 * max(1.0, abs(best_f)) and problem.sigma2(best_x) > noise_floor:
        rng = np.random.default_rng(0)
        scale = np.maximum(np.abs(x0), 1e-3)
        for _ in range(50):
            start = x0 + scale * rng.standard_normal(L)
            alt = minimize(lambda g: _cue_value_grad(problem, g)[0], start,
                           method="Nelder-Mead",
                           options={"xatol": 1e-12, "fatol": 1e-12, "maxiter": 2000})
            if alt.fun < best_f:
                best_x, best_f = alt.x, float(alt.fun)
        res = minimize(fun, best_x, jac=True, method="BFGS",
                       options={"gtol": 1e-8, "maxiter": 500})
        if res.fun <= best_f:
            best_x, best_f = res.x, float(res.fun)
        grad_norm = float(np.max(np.abs(_cue_value_grad(problem, best_x)[1])))
        if grad_norm > 1e-4 * max(1.0, abs(best_f)):
            raise NumericalError(
                f"CUE optimization stalled: objective {best_f:.6g}, "
                f"gradient norm {grad_norm:.3g} at gamma {np.round(best_x, 6).tolist()}"
            )

    s2 = problem.sigma2(best_x)
    a = problem.s_inv_half @ problem.g_zx
    if s2 <= noise_floor:
        cov = np.zeros((L, L))
    else:
        info = a.T @ a / s2
        try:
            cov = np.linalg.inv(info) / problem.n
        except np.linalg.LinAlgError as exc:
            raise NumericalError("information matrix singular at the optimum") from exc
    return CueFit(
        gamma=best_x,
        cov=cov,
        objective=float(best_f),
        n_obs=problem.n,
        n_instruments=J,
        n_params=L,
    )


def curve_standard_errors(cov: np.ndarray, basis: BasisSet) -> np.ndarray:
    """Pointwise standard errors of b(t)' gamma on the basis grid."""
    b = basis.matrix
    var = np.einsum("lg,lk,kg->g", b, cov, b)
    return np.sqrt(np.maximum(var, 0.0))


@dataclass
class AssociationFit:
    """Plain least-squares comparator on the same regressors, no instruments."""

    gamma: np.ndarray
    cov: np.ndarray
    beta: np.ndarray
    se: np.ndarray


def fit_association(regressors, outcome, basis: BasisSet) -> AssociationFit:
    """OLS of the centered outcome on the centered regressors.

    Confounded whenever the exposure is; serves as the observational
    baseline against the instrumented fit.
    """
    Xi = center_columns(np.asarray(regressors, dtype=float))
    y = np.asarray(outcome, dtype=float)
    y = y - y.mean()
    n, L = Xi.shape
    if n <= L:
        raise DataError("need more subjects than regressors")
    gamma, _, rank, _ = np.linalg.lstsq(Xi, y, rcond=None)
    if rank < L:
        raise NumericalError("regressors are collinear")
    resid = y - Xi @ gamma
    s2 = float(resid @ resid) / (n - L)
    cov = s2 * np.linalg.inv(Xi.T @ Xi)
    beta = effect_curve(gamma, basis)
    se = curve_standard_errors(cov, basis)
    return AssociationFit(gamma=gamma, cov=cov, beta=beta, se=se)


def fit_mpcmr_from_model(
    model: FpcaModel,
    basis: BasisSet,
    genotype_values: np.ndarray,
    outcome_values: np.ndarray,
):
    """Assemble the GMM problem from a fitted FPCA model and run CUE.

    Returns (problem, fit). Kept separate from the user-facing pipeline
    wrapper so studies can reuse one FPCA fit across bases.
    """
    from .basis import transform_scores

    xi_star = transform_scores(model.scores, basis, model)
    problem = make_problem(genotype_values, xi_star, outcome_values)
    fit = fit_cue(problem)
    return problem, fit
