"""Sparse functional principal component analysis by conditional expectation.

Pipeline: local-linear kernel smooths of the pooled mean and of the
within-subject cross-product covariance surface, measurement-error variance
from the diagonal gap, a trapezoid-weighted eigenproblem, and best-linear-
predictor scores for sparsely observed subjects.

Bandwidth selection is generalized cross-validation with a cluster-aware
degrees-of-freedom term: observations from one subject are dependent, so
the usual trace of the hat matrix is replaced by the sum of all
within-subject hat weights (the first-order leave-one-subject-out
correction). Independence GCV systematically undersmooths here because the
smoother is rewarded for tracking subject-level noise.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericalError
from .longdata import LongitudinalExposure

__all__ = [
    "TimeGrid",
    "FpcaModel",
    "estimate_mean",
    "estimate_cov_surface",
    "eigendecompose",
    "pace_scores",
    "fit_fpca",
]

_K0 = 0.75  # Epanechnikov kernel value at zero
_N_BINS_1D = 512
_N_BINS_2D = 101
_DET_RTOL = 1e-10
_TRACE_SUBJECT_CAP = 400


@dataclass(frozen=True)
class TimeGrid:
    """Equally spaced evaluation grid shared by all curve quantities."""

    t_min: float
    t_max: float
    n_points: int

    def __post_init__(self) -> None:
        if self.n_points < 11:
            raise DataError("grid needs at least 11 points")
        if not self.t_min < self.t_max:
            raise DataError("grid requires t_min < t_max")

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.n_points)

    @property
    def dt(self) -> float:
        return (self.t_max - self.t_min) / (self.n_points - 1)

    @property
    def trapz_weights(self) -> np.ndarray:
        w = np.full(self.n_points, self.dt)
        w[0] = w[-1] = self.dt / 2.0
        return w

    @classmethod
    def make(cls, t_min: float, t_max: float, n_points: int = 51) -> "TimeGrid":
        return cls(float(t_min), float(t_max), int(n_points))


@dataclass
class FpcaModel:
    """Fitted mean/eigen structure plus per-subject component scores.

    ``scores`` holds the raw conditional-expectation scores; they are
    mean-zero only in population, and downstream regression layers center
    them explicitly. Immutable by convention and safe to share.
    """

    grid: TimeGrid
    mu: np.ndarray
    phi: np.ndarray
    lam: np.ndarray
    sigma2: float
    scores: np.ndarray
    fve: np.ndarray
    bw_mu: float = float("nan")
    bw_cov: float = float("nan")

    @property
    def n_components(self) -> int:
        return int(self.lam.size)

    def save(self, path: str) -> None:
        """Serialize to a JSON file; floats round-trip exactly."""
        payload = {
            "t_min": self.grid.t_min,
            "t_max": self.grid.t_max,
            "n_points": self.grid.n_points,
            "mu": self.mu.tolist(),
            "phi": self.phi.tolist(),
            "lambda": self.lam.tolist(),
            "sigma2": self.sigma2,
            "fve": self.fve.tolist(),
            "scores": self.scores.tolist(),
            "bw_mu": self.bw_mu,
            "bw_cov": self.bw_cov,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path: str) -> "FpcaModel":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls(
            grid=TimeGrid.make(payload["t_min"], payload["t_max"], payload["n_points"]),
            mu=np.asarray(payload["mu"], dtype=float),
            phi=np.asarray(payload["phi"], dtype=float),
            lam=np.asarray(payload["lambda"], dtype=float),
            sigma2=float(payload["sigma2"]),
            scores=np.asarray(payload["scores"], dtype=float),
            fve=np.asarray(payload["fve"], dtype=float),
            bw_mu=float(payload["bw_mu"]),
            bw_cov=float(payload["bw_cov"]),
        )


def _epan(u: np.ndarray) -> np.ndarray:
    return 0.75 * np.maximum(0.0, 1.0 - u * u)


def _bandwidth_candidates(grid: TimeGrid) -> np.ndarray:
    lo = 2.0 * grid.dt
    hi = (grid.t_max - grid.t_min) / 2.0
    if hi <= lo:
        return np.array([hi])
    return np.geomspace(lo, hi, 10)


def _subject_blocks(sizes: np.ndarray, cap: int):
    """Deterministically subsample subjects for the clustered trace.

    ``sizes`` is the number of points each subject contributes to the
    smoother. Returns (kept subject indices, scale); scale inflates the
    sampled trace back to the full total in proportion to the summed
    squared block sizes, since each block contributes size^2 hat entries.
    """
    eligible = np.flatnonzero(sizes > 0)
    weight_all = float(np.sum(sizes[eligible].astype(float) ** 2))
    if eligible.size <= cap:
        return eligible, 1.0
    step = eligible.size / cap
    sel = eligible[(np.arange(cap) * step).astype(int)]
    weight_sel = float(np.sum(sizes[sel].astype(float) ** 2))
    return sel, weight_all / weight_sel


# ---------------------------------------------------------------------------
# 1-D local-linear smoother with fine pre-binning.
#
# Each bin is collapsed to (mean time, count, mean value); the kernel weight
# is treated as constant within a bin, which is the only approximation. The
# collapsed fit still reproduces constant and linear signals exactly.
# ---------------------------------------------------------------------------


def _bin_1d(t, y, lo, hi, n_bins):
    span = hi - lo
    if span <= 0:
        raise DataError("degenerate time span")
    idx = np.clip(((t - lo) / span * n_bins).astype(int), 0, n_bins - 1)
    cnt_full = np.bincount(idx, minlength=n_bins).astype(float)
    s_t = np.bincount(idx, weights=t, minlength=n_bins)
    s_y = np.bincount(idx, weights=y, minlength=n_bins)
    s_yy = np.bincount(idx, weights=y * y, minlength=n_bins)
    keep = cnt_full > 0
    cnt = cnt_full[keep]
    tbar = s_t[keep] / cnt
    ybar = s_y[keep] / cnt
    within_ss = float(np.sum(s_yy[keep] - cnt * ybar * ybar))
    row_of_bin = np.full(n_bins, -1)
    row_of_bin[keep] = np.arange(int(keep.sum()))
    return tbar, cnt, ybar, within_ss, row_of_bin[idx]


def _loclin_1d(tbar, cnt, ybar, g, h):
    """Binned local-linear fit at points ``g``.

    Returns (fit, bad, empty, inv0, inv1): the hat weight of a data point at
    displacement d from an evaluation point is K(d/h) (inv0 - d inv1), with
    the local-constant fallback encoded as inv0 = 1/S0, inv1 = 0 where the
    moment matrix is degenerate.
    """
    D = tbar[None, :] - g[:, None]
    W = _epan(D / h) * cnt[None, :]
    WD = W * D
    S0 = W.sum(axis=1)
    S1 = WD.sum(axis=1)
    S2 = (WD * D).sum(axis=1)
    T0 = W @ ybar
    T1 = WD @ ybar
    det = S0 * S2 - S1 * S1
    bad = det <= _DET_RTOL * S0 * S2 + 1e-300
    det_safe = np.where(bad, 1.0, det)
    fit = (S2 * T0 - S1 * T1) / det_safe
    inv0 = S2 / det_safe
    inv1 = S1 / det_safe
    empty = S0 <= 0
    s0_safe = np.maximum(S0, 1e-300)
    fit = np.where(bad, np.where(empty, np.nan, T0 / s0_safe), fit)
    inv0 = np.where(bad, np.where(empty, np.inf, 1.0 / s0_safe), inv0)
    inv1 = np.where(bad, 0.0, inv1)
    return fit, bad, empty, inv0, inv1


def _cluster_trace_1d(blocks, inv0, inv1, h, scale):
    """Sum of within-subject hat weights, the leave-one-subject-out df."""
    tr = 0.0
    for T, R in blocks:
        I0 = inv0[R]
        I1 = inv1[R]
        d = T[:, None, :] - T[:, :, None]
        a = _epan(d / h) * (I0[:, :, None] - d * I1[:, :, None])
        tr += float(a.sum())
    return tr * scale


def _gcv_1d(tbar, cnt, ybar, within_ss, n_obs, candidates, blocks, scale):
    scores = np.full(len(candidates), np.inf)
    for i, h in enumerate(candidates):
        fit, _, empty, inv0, inv1 = _loclin_1d(tbar, cnt, ybar, tbar, h)
        if np.any(empty):
            continue
        rss = within_ss + float(cnt @ (ybar - fit) ** 2)
        if blocks is not None:
            tr = _cluster_trace_1d(blocks, inv0, inv1, h, scale)
        else:
            tr = float(cnt @ (_K0 * inv0))
        if not np.isfinite(tr) or tr >= n_obs:
            continue
        scores[i] = n_obs * rss / (n_obs - tr) ** 2
    if not np.any(np.isfinite(scores)):
        raise NumericalError("bandwidth selection failed: no usable candidate")
    return float(candidates[int(np.argmin(scores))])


def _make_blocks_1d(t, counts, row_of_point):
    """Per-subject (times, bin rows) matrices, grouped by block size."""
    offsets = np.concatenate([[0], np.cumsum(counts)])
    sel, scale = _subject_blocks(counts, cap=4 * _TRACE_SUBJECT_CAP)
    blocks = []
    sel_counts = counts[sel]
    for m in np.unique(sel_counts):
        subs = sel[sel_counts == m]
        rows = np.concatenate([np.arange(offsets[i], offsets[i] + m) for i in subs])
        blocks.append((t[rows].reshape(-1, m), row_of_point[rows].reshape(-1, m)))
    return blocks, scale


def _exact_loclin_1d_point(t, y, g, h):
    """Unbinned local-linear fit at one point, widening while degenerate."""
    dist = np.abs(t - g)
    for _ in range(12):
        w = _epan(dist / h)
        if np.count_nonzero(w) >= 2:
            d = t - g
            s0 = w.sum()
            s1 = w @ d
            s2 = w @ (d * d)
            det = s0 * s2 - s1 * s1
            if det > _DET_RTOL * s0 * s2:
                t0 = w @ y
                t1 = w @ (d * y)
                return (s2 * t0 - s1 * t1) / det
        k = min(4, dist.size - 1)
        h = max(2.0 * h, float(np.partition(dist, k)[k]) * 1.0001)
    raise NumericalError(f"local-linear fit degenerate at t={g}")


def smooth_1d(t, y, grid: TimeGrid, bandwidth="auto", label="curve", groups=None):
    """Local-linear Epanechnikov smooth of scatter (t, y) onto the grid.

    ``bandwidth`` is a positive float or "auto" for generalized
    cross-validation over 10 log-spaced candidates; ``groups`` gives the
    per-point block sizes used for the cluster-aware trace (a list or array
    of counts summing to len(t), in data order). Grid points whose kernel
    window is degenerate are refit with a locally widened window (out to
    the nearest 5 observations) and a warning is emitted.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.unique(t).size < 2:
        raise DataError("need at least 2 distinct timepoints to smooth")
    tbar, cnt, ybar, within_ss, row_of_point = _bin_1d(
        t, y, grid.t_min, grid.t_max, _N_BINS_1D
    )
    if bandwidth == "auto":
        blocks, scale = (None, 1.0)
        if groups is not None:
            blocks, scale = _make_blocks_1d(t, np.asarray(groups), row_of_point)
        h = _gcv_1d(tbar, cnt, ybar, within_ss, t.size,
                    _bandwidth_candidates(grid), blocks, scale)
    else:
        h = float(bandwidth)
        if h <= 0:
            raise DataError("bandwidth must be positive")
    g = grid.points
    fit, bad, empty, _, _ = _loclin_1d(tbar, cnt, ybar, g, h)
    needs_exact = bad | empty
    if np.any(needs_exact):
        warnings.warn(
            f"{label}: widened bandwidth locally at {int(needs_exact.sum())} grid point(s)",
            stacklevel=2,
        )
        for e in np.flatnonzero(needs_exact):
            fit[e] = _exact_loclin_1d_point(t, y, g[e], h)
    return fit, h


# ---------------------------------------------------------------------------
# 2-D local-linear smoother on uniform square bins.
#
# Bins are indexed by fixed centers so the kernel-weighted displacement
# moments factor into per-axis matrices; every moment S_pq and T_pq is then
# a product A_p @ M @ A_q', which keeps the full bandwidth path cheap.
# ---------------------------------------------------------------------------


def _bin_2d(s, t, c, lo, hi, n_bins):
    span = hi - lo
    i1 = np.clip(((s - lo) / span * n_bins).astype(int), 0, n_bins - 1)
    i2 = np.clip(((t - lo) / span * n_bins).astype(int), 0, n_bins - 1)
    flat = i1 * n_bins + i2
    size = n_bins * n_bins
    cnt = np.bincount(flat, minlength=size).astype(float).reshape(n_bins, n_bins)
    s_c = np.bincount(flat, weights=c, minlength=size).reshape(n_bins, n_bins)
    s_cc = np.bincount(flat, weights=c * c, minlength=size).reshape(n_bins, n_bins)
    centers = lo + (np.arange(n_bins) + 0.5) * span / n_bins
    nz = cnt > 0
    cbar = np.zeros_like(cnt)
    cbar[nz] = s_c[nz] / cnt[nz]
    within_ss = float(np.sum(s_cc[nz] - cnt[nz] * cbar[nz] ** 2))
    return centers, cnt, s_c, cbar, within_ss, i1, i2


def _axis_kernels(centers, g, h):
    D = centers[None, :] - g[:, None]
    K = _epan(D / h)
    return K, K * D, K * D * D


def _loclin_2d(centers, cnt, s_c, g, h):
    """Binned 2-D local-linear fit on the grid g x g.

    The hat weight of a data point at displacement (d1, d2) from an
    evaluation point is K(d1/h) K(d2/h) (inv00 + d1 inv01 + d2 inv02);
    degenerate points fall back to the local constant (inv00 = 1/S00).
    """
    A0, A1, A2 = _axis_kernels(centers, g, h)
    S00 = A0 @ cnt @ A0.T
    S10 = A1 @ cnt @ A0.T
    S01 = A0 @ cnt @ A1.T
    S20 = A2 @ cnt @ A0.T
    S02 = A0 @ cnt @ A2.T
    S11 = A1 @ cnt @ A1.T
    T00 = A0 @ s_c @ A0.T
    T10 = A1 @ s_c @ A0.T
    T01 = A0 @ s_c @ A1.T
    C00 = S20 * S02 - S11 * S11
    C01 = S01 * S11 - S10 * S02
    C02 = S10 * S11 - S01 * S20
    det = S00 * C00 + S10 * C01 + S01 * C02
    scale = np.abs(S00 * S20 * S02)
    bad = det <= _DET_RTOL * scale + 1e-300
    det_safe = np.where(bad, 1.0, det)
    fit = (C00 * T00 + C01 * T10 + C02 * T01) / det_safe
    inv00 = C00 / det_safe
    inv01 = C01 / det_safe
    inv02 = C02 / det_safe
    empty = S00 <= 0
    s00_safe = np.maximum(S00, 1e-300)
    fit = np.where(bad, np.where(empty, np.nan, T00 / s00_safe), fit)
    inv00 = np.where(bad, np.where(empty, np.inf, 1.0 / s00_safe), inv00)
    inv01 = np.where(bad, 0.0, inv01)
    inv02 = np.where(bad, 0.0, inv02)
    return fit, inv00, inv01, inv02, bad, empty


def _cluster_trace_2d(blocks, inv00, inv01, inv02, h, scale):
    tr = 0.0
    for S, T, I1, I2 in blocks:
        R0 = inv00[I1, I2]
        R1 = inv01[I1, I2]
        R2 = inv02[I1, I2]
        nb = S.shape[0]
        chunk = max(1, int(4e6 / max(S.shape[1] ** 2, 1)))
        for lo_i in range(0, nb, chunk):
            sl = slice(lo_i, lo_i + chunk)
            ds = S[sl, None, :] - S[sl, :, None]
            dt = T[sl, None, :] - T[sl, :, None]
            w = _epan(ds / h) * _epan(dt / h)
            a = w * (R0[sl, :, None] + ds * R1[sl, :, None] + dt * R2[sl, :, None])
            tr += float(a.sum())
    return tr * scale


def _gcv_2d(centers, cnt, s_c, cbar, within_ss, n_obs, candidates, blocks, scale):
    scores = np.full(len(candidates), np.inf)
    nz = cnt > 0
    for i, h in enumerate(candidates):
        fit, inv00, inv01, inv02, _, empty = _loclin_2d(centers, cnt, s_c, centers, h)
        if np.any(empty[nz]):
            continue
        rss = within_ss + float(np.sum(cnt[nz] * (cbar[nz] - fit[nz]) ** 2))
        if blocks is not None:
            tr = _cluster_trace_2d(blocks, inv00, inv01, inv02, h, scale)
        else:
            tr = float(np.sum(cnt[nz] * _K0 * _K0 * inv00[nz]))
        if not np.isfinite(tr) or tr >= n_obs:
            continue
        scores[i] = n_obs * rss / (n_obs - tr) ** 2
    if not np.any(np.isfinite(scores)):
        raise NumericalError("surface bandwidth selection failed")
    return float(candidates[int(np.argmin(scores))])


def _exact_loclin_2d_point(s, t, c, g1, g2, h):
    dist = np.maximum(np.abs(s - g1), np.abs(t - g2))
    for _ in range(12):
        w = _epan((s - g1) / h) * _epan((t - g2) / h)
        if np.count_nonzero(w) >= 3:
            d1 = s - g1
            d2 = t - g2
            X = np.column_stack([np.ones_like(d1), d1, d2])
            Xw = X * w[:, None]
            M = Xw.T @ X
            rhs = Xw.T @ c
            try:
                sol = np.linalg.solve(M, rhs)
                return float(sol[0])
            except np.linalg.LinAlgError:
                pass
        k = min(4, dist.size - 1)
        h = max(2.0 * h, float(np.partition(dist, k)[k]) * 1.0001)
    raise NumericalError(f"surface fit degenerate at ({g1}, {g2})")


def smooth_2d(s, t, c, grid: TimeGrid, bandwidth="auto", label="surface", block_sizes=None):
    """Product-Epanechnikov local-linear smooth of (s, t, c) onto grid x grid.

    ``block_sizes`` lists the number of consecutive points contributed by
    each subject (in data order); when given, AUTO bandwidth selection uses
    the cluster-aware trace.
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    c = np.asarray(c, dtype=float)
    centers, cnt, s_c, cbar, within_ss, i1, i2 = _bin_2d(
        s, t, c, grid.t_min, grid.t_max, _N_BINS_2D
    )
    if bandwidth == "auto":
        blocks, scale = (None, 1.0)
        if block_sizes is not None:
            blocks, scale = _make_blocks_2d(s, t, i1, i2, np.asarray(block_sizes))
        h = _gcv_2d(centers, cnt, s_c, cbar, within_ss, s.size,
                    _bandwidth_candidates(grid), blocks, scale)
    else:
        h = float(bandwidth)
        if h <= 0:
            raise DataError("bandwidth must be positive")
    g = grid.points
    fit, _, _, _, bad, empty = _loclin_2d(centers, cnt, s_c, g, h)
    needs_exact = bad | empty
    if np.any(needs_exact):
        warnings.warn(
            f"{label}: widened bandwidth locally at {int(needs_exact.sum())} point(s)",
            stacklevel=2,
        )
        for e1, e2 in zip(*np.nonzero(needs_exact)):
            fit[e1, e2] = _exact_loclin_2d_point(s, t, c, g[e1], g[e2], h)
    return fit, h


def _make_blocks_2d(s, t, i1, i2, block_sizes):
    offsets = np.concatenate([[0], np.cumsum(block_sizes)])
    sel, scale = _subject_blocks(block_sizes, cap=_TRACE_SUBJECT_CAP)
    blocks = []
    sel_sizes = block_sizes[sel]
    for p in np.unique(sel_sizes):
        subs = sel[sel_sizes == p]
        rows = np.concatenate([np.arange(offsets[i], offsets[i] + p) for i in subs])
        blocks.append((
            s[rows].reshape(-1, p),
            t[rows].reshape(-1, p),
            i1[rows].reshape(-1, p),
            i2[rows].reshape(-1, p),
        ))
    return blocks, scale


# ---------------------------------------------------------------------------
# FPCA operations
# ---------------------------------------------------------------------------


def estimate_mean(data: LongitudinalExposure, grid: TimeGrid, bandwidth="auto"):
    """Local-linear smooth of the pooled (time, exposure) scatter."""
    _, t, x = data.flatten()
    counts = np.asarray([ti.size for ti in data.times])
    curve, h = smooth_1d(t, x, grid, bandwidth, label="mean curve", groups=counts)
    return curve, h


def estimate_cov_surface(data: LongitudinalExposure, grid: TimeGrid, mu, bandwidth="auto"):
    """Covariance surface and measurement-error variance.

    Off-diagonal within-subject residual cross-products are smoothed with a
    2-D local-linear fit and symmetrized. The noise variance is the average,
    over the interior 80% of the grid, of the gap between a 1-D smooth of
    the squared residuals (which include the noise) and the surface diagonal
    (which does not), floored at zero.

    Returns (surface, sigma2, bandwidth_used).
    """
    _, t, x = data.flatten()
    counts = np.asarray([ti.size for ti in data.times])
    if int(np.sum(counts >= 2)) < 10:
        raise DataError("need at least 10 subjects with 2+ measurements")
    resid = x - np.interp(t, grid.points, mu)

    s_parts, t_parts, c_parts = [], [], []
    offsets = np.concatenate([[0], np.cumsum(counts)])
    for m in np.unique(counts):
        if m < 2:
            continue
        subs = np.flatnonzero(counts == m)
        rows = np.concatenate([np.arange(offsets[i], offsets[i] + m) for i in subs])
        Tm = t[rows].reshape(-1, m)
        Rm = resid[rows].reshape(-1, m)
        off = ~np.eye(m, dtype=bool)
        Ts = np.broadcast_to(Tm[:, :, None], (Tm.shape[0], m, m))
        Tt = np.broadcast_to(Tm[:, None, :], (Tm.shape[0], m, m))
        Cp = Rm[:, :, None] * Rm[:, None, :]
        s_parts.append(Ts[:, off].ravel())
        t_parts.append(Tt[:, off].ravel())
        c_parts.append(Cp[:, off].ravel())
    s_all = np.concatenate(s_parts)
    t_all = np.concatenate(t_parts)
    c_all = np.concatenate(c_parts)
    # pair blocks follow the concatenation order above: grouped by m ascending
    sizes_in_order = []
    for m in np.unique(counts):
        if m < 2:
            continue
        sizes_in_order.extend([m * (m - 1)] * int(np.sum(counts == m)))
    sizes_in_order = np.asarray(sizes_in_order)

    surface, h = smooth_2d(
        s_all, t_all, c_all, grid, bandwidth,
        label="covariance surface", block_sizes=sizes_in_order,
    )
    surface = (surface + surface.T) / 2.0

    diag_curve, _ = smooth_1d(
        t, resid * resid, grid, bandwidth if bandwidth != "auto" else "auto",
        label="diagonal curve", groups=counts,
    )
    span = grid.t_max - grid.t_min
    interior = (grid.points >= grid.t_min + 0.1 * span) & (
        grid.points <= grid.t_max - 0.1 * span
    )
    sigma2 = float(np.mean(diag_curve[interior] - np.diag(surface)[interior]))
    sigma2 = max(sigma2, 0.0)
    return surface, sigma2, h


def eigendecompose(surface, grid: TimeGrid, fve_threshold: float, max_components=None):
    """Solve the trapezoid-discretized integral eigenproblem.

    Returns (phi, lam, fve): eigenfunctions as rows scaled to unit trapezoid
    norm, nonincreasing nonnegative eigenvalues, and cumulative fraction of
    variance explained, truncated at the smallest count reaching
    ``fve_threshold`` (optionally capped at ``max_components``). Signs are
    fixed so each eigenfunction integrates to a nonnegative value, falling
    back to a nonnegative left endpoint when the integral is near zero.
    """
    if not 0.0 < fve_threshold <= 1.0:
        raise DataError("fve_threshold must lie in (0, 1]")
    C = np.asarray(surface, dtype=float)
    if C.shape[0] != C.shape[1] or C.shape[0] != grid.n_points:
        raise DataError("surface shape does not match grid")
    if not np.allclose(C, C.T, atol=1e-8 * (1.0 + np.abs(C).max())):
        raise DataError("surface must be symmetric")
    w = grid.trapz_weights
    sq = np.sqrt(w)
    A = sq[:, None] * C * sq[None, :]
    A = (A + A.T) / 2.0
    evals, evecs = np.linalg.eigh(A)
    evals = evals[::-1]
    evecs = evecs[:, ::-1]
    pos = evals > 0
    if not np.any(pos):
        raise NumericalError("degenerate covariance: no positive eigenvalues")
    lam_all = evals[pos]
    vec_all = evecs[:, pos]
    total = float(lam_all.sum())
    cum = np.cumsum(lam_all) / total
    K = int(np.searchsorted(cum, fve_threshold - 1e-12) + 1)
    K = min(K, lam_all.size)
    if max_components is not None:
        K = min(K, int(max_components))
    lam = lam_all[:K].copy()
    phi = (vec_all[:, :K] / sq[:, None]).T
    integrals = phi @ w
    span_norm = 1e-8 * np.sqrt(grid.t_max - grid.t_min)
    for k in range(K):
        s = integrals[k]
        ref = s if abs(s) >= span_norm else phi[k, 0]
        if ref < 0:
            phi[k] = -phi[k]
    fve = cum[:K].copy()
    return phi, lam, fve


def pace_scores(data: LongitudinalExposure, grid: TimeGrid, mu, phi, lam, sigma2, K=None):
    """Conditional-expectation component scores for every subject.

    For subject i with residual vector r_i, the score vector is
    Lambda Phi_i' (Phi_i Lambda Phi_i' + sigma2 I)^{-1} r_i with the
    eigenfunctions interpolated linearly at the subject's observation times.
    A 1e-10 diagonal jitter is added when sigma2 is numerically zero, since
    the truncated expansion alone can be singular; subjects whose covariance
    remains unsolvable get a zero score vector and a warning.
    """
    phi = np.asarray(phi, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if K is None:
        K = lam.size
    if K > lam.size:
        raise DataError("K exceeds retained components")
    phi = phi[:K]
    lam = lam[:K]
    _, t, x = data.flatten()
    resid = x - np.interp(t, grid.points, mu)
    phi_at = np.vstack([np.interp(t, grid.points, p) for p in phi])  # K x N

    n = data.n_subjects
    counts = np.asarray([ti.size for ti in data.times])
    offsets = np.concatenate([[0], np.cumsum(counts)])
    out = np.zeros((n, K))
    jitter = sigma2 if sigma2 > 1e-10 else sigma2 + 1e-10
    failed = 0
    for m in np.unique(counts):
        subs = np.flatnonzero(counts == m)
        rows = np.concatenate([np.arange(offsets[i], offsets[i] + m) for i in subs])
        P = phi_at[:, rows].reshape(K, -1, m).transpose(1, 2, 0)  # nb x m x K
        R = resid[rows].reshape(-1, m)
        Sig = np.einsum("imk,k,ilk->iml", P, lam, P)
        Sig[:, np.arange(m), np.arange(m)] += jitter
        try:
            sol = np.linalg.solve(Sig, R[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            sol = np.empty_like(R)
            for i in range(len(subs)):
                try:
                    sol[i] = np.linalg.solve(Sig[i], R[i])
                except np.linalg.LinAlgError:
                    sol[i] = 0.0
                    failed += 1
        out[subs] = np.einsum("imk,im->ik", P, sol) * lam[None, :]
    if failed:
        warnings.warn(f"{failed} subject(s) got zero scores: singular covariance")
    return out


def fit_fpca(
    data: LongitudinalExposure,
    grid: TimeGrid | None = None,
    fve_threshold: float = 0.95,
    bandwidths="auto",
    max_components=None,
) -> FpcaModel:
    """Full sparse-FPCA fit: mean, covariance, eigenpairs, noise, scores.

    ``bandwidths`` is "auto" or a (mean, covariance) pair of positive floats.
    """
    if grid is None:
        grid = TimeGrid.make(data.t_min, data.t_max)
    if bandwidths == "auto":
        bw_mu = bw_cov = "auto"
    else:
        bw_mu, bw_cov = bandwidths
    mu, h_mu = estimate_mean(data, grid, bw_mu)
    surface, sigma2, h_cov = estimate_cov_surface(data, grid, mu, bw_cov)
    phi, lam, fve = eigendecompose(surface, grid, fve_threshold, max_components)
    scores = pace_scores(data, grid, mu, phi, lam, sigma2)
    return FpcaModel(
        grid=grid,
        mu=mu,
        phi=phi,
        lam=lam,
        sigma2=sigma2,
        scores=scores,
        fve=fve,
        bw_mu=h_mu,
        bw_cov=h_cov,
    )
