"""Multiple breaks in the second moments of estimated factors.

Break dates are stored as observation counts ``T_1 < ... < T_m``: regime ``k``
covers rows ``T_{k-1} .. T_k - 1`` (0-based) with ``T_0 = 0`` and
``T_{m+1} = T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_matrix, unwrap_panel
from .critical_values import critical_value
from .exceptions import ValidationError
from .factors import FactorEstimate, estimate_factors

__all__ = [
    "LongRunCov",
    "BreakModel",
    "StructuralBreakFactorModel",
    "vech_moments",
    "default_bandwidth",
    "hac_long_run_cov",
    "min_segment_length",
    "ssne",
    "dp_break_search",
    "sup_f_test",
    "udmax_wdmax",
    "sequential_test",
    "sequential_partitions",
    "decide_num_breaks",
    "segment_factor_estimates",
]


def vech_moments(F) -> np.ndarray:
    """Row ``t`` holds ``vech(f_t f_t')``, the lower triangle stacked by column."""
    F = as_matrix(F, "factor path")
    r = F.shape[1]
    rows, cols = [], []
    for j in range(r):
        for i in range(j, r):
            rows.append(i)
            cols.append(j)
    return F[:, rows] * F[:, cols]


def default_bandwidth(T: int) -> int:
    return int(math.floor(4.0 * (T / 100.0) ** (2.0 / 9.0)))


@dataclass(frozen=True)
class LongRunCov:
    omega: np.ndarray
    bandwidth: int
    kernel: str = "Bartlett"
    ridge: float = 0.0
    flagged: bool = False

    @property
    def nu(self) -> int:
        return self.omega.shape[0]

    def weight(self) -> np.ndarray:
        """Inverse of ``omega`` (after any recorded ridge)."""
        return np.linalg.inv(self.omega + self.ridge * np.eye(self.nu))


def hac_long_run_cov(Z, bandwidth: int | None = None) -> LongRunCov:
    """Bartlett-kernel long-run covariance of the (demeaned) rows of ``Z``.

    A condition number above 1e12 flags the estimate and records a ridge of
    ``1e-8 * trace / nu`` that :meth:`LongRunCov.weight` adds before inverting.
    """
    Z = as_matrix(Z, "moment series")
    T, nu = Z.shape
    B = default_bandwidth(T) if bandwidth is None else int(bandwidth)
    if B < 0:
        raise ValidationError("bandwidth must be non-negative")
    if T <= 2 * B:
        raise ValidationError(f"need T > 2 * bandwidth, got T={T}, bandwidth={B}")
    Zc = Z - Z.mean(axis=0)
    omega = Zc.T @ Zc / T
    for k in range(1, B + 1):
        gamma = Zc[k:].T @ Zc[:-k] / T
        omega += (1.0 - k / (B + 1.0)) * (gamma + gamma.T)
    omega = 0.5 * (omega + omega.T)
    cond = np.linalg.cond(omega) if np.all(np.isfinite(omega)) else np.inf
    ridge, flagged = 0.0, False
    if not cond <= 1e12:
        flagged = True
        ridge = 1e-8 * max(np.trace(omega), np.finfo(float).tiny) / nu
    return LongRunCov(omega, B, "Bartlett", ridge, flagged)


def min_segment_length(T: int, epsilon: float) -> int:
    """Minimum regime length ``floor(epsilon * T)`` (at least one observation)."""
    if not 0.0 < epsilon < 1.0:
        raise ValidationError(f"epsilon must lie in (0, 1), got {epsilon}")
    return max(1, int(math.floor(epsilon * T + 1e-9)))


def _weight_matrix(omega, nu: int) -> np.ndarray:
    if isinstance(omega, LongRunCov):
        W = omega.weight()
    else:
        W = np.linalg.inv(np.atleast_2d(np.asarray(omega, dtype=float)))
    if W.shape != (nu, nu):
        raise ValidationError(f"long-run covariance must be {nu}x{nu}, got {W.shape}")
    return W


def _check_breaks(breaks, T: int, min_length: int = 1) -> list[int]:
    b = [int(x) for x in breaks]
    bounds = [0, *b, T]
    for lo, hi in zip(bounds, bounds[1:]):
        if hi - lo < min_length:
            raise ValidationError(f"segment ({lo}, {hi}] shorter than the minimum length {min_length}")
    return b


def _segment_ssne(Z: np.ndarray, W: np.ndarray) -> float:
    D = Z - Z.mean(axis=0)
    return float(np.einsum("ti,ij,tj->", D, W, D))


def ssne(F, breaks, omega, min_length: int | None = None) -> float:
    """Weighted sum of squared deviations of ``vech(f_t f_t')`` from segment means.

    An empty break list gives the no-break value.
    """
    Z = vech_moments(F)
    T, nu = Z.shape
    W = _weight_matrix(omega, nu)
    b = _check_breaks(breaks, T, max(nu, min_length or 1))
    bounds = [0, *b, T]
    return sum(_segment_ssne(Z[lo:hi], W) for lo, hi in zip(bounds, bounds[1:]))


def _cost_matrix(Z: np.ndarray, W: np.ndarray, h: int) -> np.ndarray:
    """``cost[i, j]`` is the SSNE of rows ``i .. j-1``; ``inf`` when shorter than ``h``."""
    T = Z.shape[0]
    ZW = Z @ W
    quad = np.einsum("ti,ti->t", ZW, Z)
    cost = np.full((T + 1, T + 1), np.inf)
    for i in range(T - h + 1):
        S = np.cumsum(Z[i:], axis=0)[h - 1:]
        Q = np.cumsum(quad[i:])[h - 1:]
        n = np.arange(h, T - i + 1, dtype=float)
        c = Q - np.einsum("ti,ij,tj->t", S, W, S) / n
        cost[i, i + h:] = np.maximum(c, 0.0)
    return cost


def _dp(cost: np.ndarray, T: int, h: int, max_breaks: int) -> tuple[np.ndarray, list[list[int]]]:
    """Optimal cost and partition for every break count ``0..max_breaks``.

    Ties resolve to the smallest candidate break at every stage.
    """
    best = np.full((max_breaks + 1, T + 1), np.inf)
    back = np.zeros((max_breaks + 1, T + 1), dtype=int)
    best[0] = cost[0]
    for k in range(1, max_breaks + 1):
        # candidates: best[k-1, s] + cost[s, j]
        total = best[k - 1][:, None] + cost
        total[: k * h] = np.inf
        back[k] = np.argmin(total, axis=0)
        best[k] = total[back[k], np.arange(T + 1)]
    partitions = []
    for k in range(max_breaks + 1):
        b, j = [], T
        for kk in range(k, 0, -1):
            j = int(back[kk, j])
            b.append(j)
        partitions.append(sorted(b))
    return best[:, T], partitions


@dataclass
class BreakModel:
    """Break dates with their SSNE objective and per-segment factor estimates."""

    break_indices: list[int]
    epsilon: float
    min_length: int
    ssne: float
    ssne0: float
    r_tilde: int
    n_obs: int
    segment_factors: list[FactorEstimate] = field(default_factory=list)
    factor_path: np.ndarray | None = None
    omega: LongRunCov | None = None
    dates: pd.PeriodIndex | None = None
    statistics: dict = field(default_factory=dict)
    alpha: float | None = None

    @property
    def n_breaks(self) -> int:
        return len(self.break_indices)

    @property
    def bounds(self) -> list[tuple[int, int]]:
        b = [0, *self.break_indices, self.n_obs]
        return list(zip(b, b[1:]))

    def labels(self) -> np.ndarray:
        lab = np.zeros(self.n_obs, dtype=int)
        for k, (lo, hi) in enumerate(self.bounds):
            lab[lo:hi] = k
        return lab

    @property
    def break_dates(self) -> list[str] | None:
        """Date of the last observation of each regime that ends with a break."""
        if self.dates is None:
            return None
        return [str(self.dates[b - 1]) for b in self.break_indices]

    def to_dict(self) -> dict:
        stats = {k: (list(v) if isinstance(v, (list, tuple, np.ndarray)) else v) for k, v in self.statistics.items()}
        return {
            "break_indices": list(self.break_indices),
            "break_dates": self.break_dates,
            "ssne": self.ssne,
            "ssne0": self.ssne0,
            "statistics": stats,
            "epsilon": self.epsilon,
            "min_length": self.min_length,
            "alpha": self.alpha,
            "r_tilde": self.r_tilde,
            "bandwidth": None if self.omega is None else self.omega.bandwidth,
        }


def _prepare(F, epsilon: float, omega, min_length: int | None):
    F = as_matrix(F, "factor path")
    Z = vech_moments(F)
    T, nu = Z.shape
    if omega is None:
        omega = hac_long_run_cov(Z)
    W = _weight_matrix(omega, nu)
    h = min_segment_length(T, epsilon) if min_length is None else int(min_length)
    if h < nu:
        raise ValidationError(f"minimum segment length {h} is below nu={nu}")
    return F, Z, W, h, omega


def _feasible(m: int, h: int, T: int) -> None:
    if m < 0 or (m + 1) * h > T:
        raise ValidationError(f"{m} breaks with minimum length {h} do not fit in T={T}")


def dp_break_search(F, m: int, epsilon: float, omega=None, min_length: int | None = None) -> BreakModel:
    """Globally SSNE-optimal partition with ``m`` breaks."""
    F, Z, W, h, omega = _prepare(F, epsilon, omega, min_length)
    T = Z.shape[0]
    _feasible(m, h, T)
    _, parts = _dp(_cost_matrix(Z, W, h), T, h, m)
    b = parts[m]
    return BreakModel(
        break_indices=b,
        epsilon=epsilon,
        min_length=h,
        ssne=ssne(F, b, omega),
        ssne0=ssne(F, [], omega),
        r_tilde=F.shape[1],
        n_obs=T,
        factor_path=F,
        omega=omega if isinstance(omega, LongRunCov) else None,
    )


def _sup_f_all(F, Z, W, h, omega, max_l):
    T, nu = Z.shape
    _, parts = _dp(_cost_matrix(Z, W, h), T, h, max_l)
    s0 = ssne(F, [], omega)
    stats, dates = [], []
    for l in range(1, max_l + 1):
        s = ssne(F, parts[l], omega)
        stats.append((s0 - s) / (l * nu))
        dates.append(parts[l])
    return stats, dates


def sup_f_test(F, l: int, epsilon: float, omega=None, min_length: int | None = None) -> tuple[float, list[int]]:
    """sup-F statistic for ``l`` breaks and the maximising break dates."""
    if l < 1:
        raise ValidationError("l must be at least 1")
    F, Z, W, h, omega = _prepare(F, epsilon, omega, min_length)
    _feasible(l, h, Z.shape[0])
    stats, dates = _sup_f_all(F, Z, W, h, omega, l)
    return stats[-1], dates[-1]


def udmax_wdmax(F, L: int, epsilon: float, omega=None, alpha: float = 0.05,
                min_length: int | None = None) -> tuple[float, float]:
    """Double-maximum statistics over ``1..L`` breaks.

    WDmax weights sup-F(l) by ``c(nu, alpha, 1) / c(nu, alpha, l)``.
    """
    if L < 1:
        raise ValidationError("L must be at least 1")
    F, Z, W, h, omega = _prepare(F, epsilon, omega, min_length)
    _feasible(L, h, Z.shape[0])
    nu = Z.shape[1]
    stats, _ = _sup_f_all(F, Z, W, h, omega, L)
    c1 = critical_value("supF", nu, epsilon, alpha, 1)
    weights = [c1 / critical_value("supF", nu, epsilon, alpha, l) for l in range(1, L + 1)]
    return max(stats), max(w * s for w, s in zip(weights, stats))


def _best_insertion(F, Z, W, h, omega, breaks):
    """Lowest-SSNE partition obtained by adding one admissible break to ``breaks``."""
    T = Z.shape[0]
    bounds = [0, *breaks, T]
    best_val, best_tau = np.inf, None
    for lo, hi in zip(bounds, bounds[1:]):
        if hi - lo < 2 * h:
            continue
        seg = Z[lo:hi]
        cost = _cost_matrix(seg, W, h)
        n = hi - lo
        split = cost[0, h:n - h + 1] + cost[h:n - h + 1, n]
        gain = cost[0, n] - split
        k = int(np.argmax(gain))
        # compare on the resulting total, recomputed directly
        cand = sorted([*breaks, lo + h + k])
        val = ssne(F, cand, omega)
        if val < best_val:
            best_val, best_tau = val, lo + h + k
    if best_tau is None:
        raise ValidationError(f"no admissible insertion of an additional break into {list(breaks)}")
    return best_val, sorted([*breaks, best_tau])


def sequential_partitions(F, L: int, epsilon: float, omega=None, min_length: int | None = None):
    """Nested partitions built by adding one break at a time, earlier breaks held fixed.

    Returns ``(partitions, statistics)`` where ``statistics[l]`` is the
    sequential F(l|l+1) statistic, scaled by ``1/nu``.
    """
    F, Z, W, h, omega = _prepare(F, epsilon, omega, min_length)
    nu = Z.shape[1]
    parts, stats = [[]], []
    current = ssne(F, [], omega)
    for _ in range(L + 1):
        try:
            val, nxt = _best_insertion(F, Z, W, h, omega, parts[-1])
        except ValidationError:
            break
        stats.append((current - val) / nu)
        parts.append(nxt)
        current = val
    return parts, stats


def sequential_test(F, l: int, epsilon: float, omega=None, min_length: int | None = None,
                    null: str = "sequential") -> float:
    """F(l|l+1): SSNE reduction from one extra break on top of an ``l``-break null.

    ``null="sequential"`` holds the earlier breaks fixed as they were found one
    at a time; ``null="global"`` uses the DP-optimal ``l``-break partition.
    The statistic is divided by ``nu`` to share the sup-F scale.
    """
    if l < 0:
        raise ValidationError("l must be non-negative")
    F, Z, W, h, omega = _prepare(F, epsilon, omega, min_length)
    T, nu = Z.shape
    _feasible(l, h, T)
    if null == "global":
        _, parts = _dp(_cost_matrix(Z, W, h), T, h, l)
        base = parts[l]
    elif null == "sequential":
        base = []
        for _ in range(l):
            _, base = _best_insertion(F, Z, W, h, omega, base)
    else:
        raise ValidationError(f"unknown null convention {null!r}")
    val, _ = _best_insertion(F, Z, W, h, omega, base)
    return (ssne(F, base, omega) - val) / nu


def decide_num_breaks(F, L: int, epsilon: float, alpha: float = 0.05, omega=None,
                      min_length: int | None = None, details: dict | None = None) -> int:
    """Dmax screen for any break, then sequential F(l|l+1) tests from ``l = 1``.

    Returns 0 when neither UDmax nor WDmax rejects; otherwise the smallest
    ``l >= 1`` whose sequential statistic is below its critical value, capped
    at ``L``. Filled-in test statistics are written to ``details`` if given.
    """
    F, Z, W, h, omega = _prepare(F, epsilon, omega, min_length)
    T, nu = Z.shape
    _feasible(L, h, T)
    stats, dates = _sup_f_all(F, Z, W, h, omega, L)
    c1 = critical_value("supF", nu, epsilon, alpha, 1)
    weights = [c1 / critical_value("supF", nu, epsilon, alpha, l) for l in range(1, L + 1)]
    ud = max(stats)
    wd = max(w * s for w, s in zip(weights, stats))
    ud_cv = critical_value("UDmax", nu, epsilon, alpha, L)
    wd_cv = critical_value("WDmax", nu, epsilon, alpha, L)
    _, seq = sequential_partitions(F, L, epsilon, omega, h)
    if details is not None:
        details.update(supF=stats, supF_breaks=dates, udmax=ud, wdmax=wd,
                       udmax_cv=ud_cv, wdmax_cv=wd_cv, sequential=seq)
    if ud <= ud_cv and wd <= wd_cv:
        return 0
    seq_cv = []
    m = L
    for l in range(1, L + 1):
        if l >= len(seq):
            m = l
            break
        cv = critical_value("seq", nu, epsilon, alpha, l)
        seq_cv.append(cv)
        if seq[l] <= cv:
            m = l
            break
    if details is not None:
        details["sequential_cv"] = seq_cv
    return min(m, L)


def segment_factor_estimates(X, breaks, r: int = 1) -> list[FactorEstimate]:
    """Principal-components factors estimated separately on each segment."""
    X = as_matrix(X, "panel")
    T = X.shape[0]
    b = _check_breaks(breaks, T)
    bounds = [0, *b, T]
    return [estimate_factors(X[lo:hi], r, segment=(lo, hi)) for lo, hi in zip(bounds, bounds[1:])]


class StructuralBreakFactorModel(BaseEstimator):
    """Multiple breaks in a high-dimensional factor model.

    ``fit`` estimates ``n_factors_test`` full-sample factors, runs the Dmax and
    sequential tests (unless ``n_breaks`` is fixed), locates the globally
    optimal break dates and re-estimates ``n_factors`` factors per segment.

    Parameters
    ----------
    n_factors : int, default=1
        Factors per segment.
    n_factors_test : int or None, default=None
        Factors used for the break tests; defaults to ``n_factors``.
    epsilon : float, default=0.15
        Minimum regime length as a fraction of the sample.
    max_breaks : int, default=5
    alpha : float, default=0.05
    n_breaks : int or None, default=None
        Skip testing and impose this many breaks.
    bandwidth : int or None, default=None
        Bartlett truncation lag; ``floor(4 (T/100)^(2/9))`` when None.
    """

    def __init__(self, n_factors=1, n_factors_test=None, epsilon=0.15, max_breaks=5,
                 alpha=0.05, n_breaks=None, bandwidth=None):
        self.n_factors = n_factors
        self.n_factors_test = n_factors_test
        self.epsilon = epsilon
        self.max_breaks = max_breaks
        self.alpha = alpha
        self.n_breaks = n_breaks
        self.bandwidth = bandwidth

    def fit(self, X, y=None):
        X, dates = unwrap_panel(X)
        T = X.shape[0]
        r_test = self.n_factors_test or self.n_factors
        F = estimate_factors(X, r_test).factors
        omega = hac_long_run_cov(vech_moments(F), self.bandwidth)
        h = min_segment_length(T, self.epsilon)
        L = min(self.max_breaks, T // h - 1)
        details: dict = {}
        if self.n_breaks is None:
            m = decide_num_breaks(F, L, self.epsilon, self.alpha, omega, details=details)
        else:
            m = int(self.n_breaks)
        model = dp_break_search(F, m, self.epsilon, omega)
        model.segment_factors = segment_factor_estimates(X, model.break_indices, self.n_factors)
        model.dates = dates
        model.alpha = self.alpha
        model.statistics = {k: v for k, v in details.items() if k != "supF_breaks"}
        self.break_model_ = model
        self.break_indices_ = model.break_indices
        self.n_breaks_ = m
        self.n_features_in_ = X.shape[1]
        return self

    def segment_factor_path(self) -> np.ndarray:
        """Stitched per-segment factor path (first factor of each segment)."""
        check_is_fitted(self, "break_model_")
        return np.concatenate([fe.factors[:, 0] for fe in self.break_model_.segment_factors])
