"""Second-step regressions from estimated factors to a core inflation indicator."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import pandas as pd
from scipy import stats
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_vector, unwrap_panel
from .breaks import BreakModel, StructuralBreakFactorModel
from .exceptions import NumericalError, ValidationError
from .factors import estimate_factors, project_factor
from .markov import MsModel, em_fit, filter_with_model
from .panel import InflationSeries

__all__ = [
    "Variant",
    "IndicatorSeries",
    "fit_baseline",
    "fit_sc",
    "fit_ms",
    "block_diagonal_ols",
    "regime_variance_diagnostic",
    "CoreInflationIndicator",
]


class Variant(str, enum.Enum):
    BASELINE = "Baseline"
    SC = "SC"
    MS = "MS"


@dataclass(frozen=True)
class IndicatorSeries:
    """Fitted indicator path with its per-regime coefficients.

    ``values[t] = coefficients[regimes[t], 0] + coefficients[regimes[t], 1] * factor[t]``.
    """

    dates: pd.PeriodIndex | None
    values: np.ndarray
    variant: Variant
    coefficients: np.ndarray
    regimes: np.ndarray
    factor: np.ndarray
    headline: np.ndarray
    std_errors: np.ndarray
    error_variance: np.ndarray
    fallback: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    vintage: str | None = None

    @property
    def residuals(self) -> np.ndarray:
        return self.headline - self.values

    @property
    def n_regimes(self) -> int:
        return self.coefficients.shape[0]

    def to_frame(self) -> pd.DataFrame:
        """Table ``date, headline, indicator, regime, alpha, beta``; regimes are 1-based."""
        date = self.dates.strftime("%Y-%m") if self.dates is not None else np.arange(1, len(self.values) + 1)
        return pd.DataFrame({
            "date": date,
            "headline": self.headline,
            "indicator": self.values,
            "regime": self.regimes + 1,
            "alpha": self.coefficients[self.regimes, 0],
            "beta": self.coefficients[self.regimes, 1],
        })

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "vintage": self.vintage,
            "coefficients": [
                {"regime": j + 1, "alpha": float(a), "beta": float(b), "se_alpha": float(sa), "se_beta": float(sb),
                 "error_variance": float(v), "n_obs": int(np.sum(self.regimes == j)),
                 "pooled_fallback": bool(self.fallback[j]) if self.fallback.size else False}
                for j, ((a, b), (sa, sb), v) in enumerate(zip(self.coefficients, self.std_errors, self.error_variance))
            ],
        }


def _headline(headline, dates, T: int) -> np.ndarray:
    if isinstance(headline, InflationSeries):
        if dates is not None:
            return headline.align(dates)
        y = headline.values
    else:
        y = as_vector(headline, "headline")
    if y.shape[0] != T:
        raise ValidationError(f"headline has {y.shape[0]} observations but the factor has {T}")
    return y


def _ols(y: np.ndarray, f: np.ndarray, w: np.ndarray | None = None):
    """Intercept and slope with classical standard errors and residual variance."""
    if np.ptp(f) == 0:
        raise ValidationError("factor is constant; slope is not identified")
    Z = np.column_stack([np.ones_like(f), f])
    if w is None:
        coef, *_ = np.linalg.lstsq(Z, y, rcond=None)
        resid = y - Z @ coef
        n = len(y)
        dof = max(n - 2, 1)
        s2 = resid @ resid / dof
        cov = s2 * np.linalg.inv(Z.T @ Z)
    else:
        sw = np.sqrt(w)
        coef, *_ = np.linalg.lstsq(Z * sw[:, None], y * sw, rcond=None)
        resid = y - Z @ coef
        dof = max(w.sum() - 2, 1.0)
        s2 = np.sum(w * resid**2) / dof
        cov = s2 * np.linalg.inv((Z * w[:, None]).T @ Z)
    return coef, np.sqrt(np.clip(np.diag(cov), 0.0, None)), s2


def fit_baseline(headline, factor, dates: pd.PeriodIndex | None = None, vintage: str | None = None) -> IndicatorSeries:
    """Single OLS of headline inflation on an intercept and the factor."""
    f = as_vector(factor, "factor")
    if isinstance(headline, InflationSeries) and dates is None and len(headline.values) == len(f):
        dates = headline.dates
    y = _headline(headline, dates, len(f))
    coef, se, s2 = _ols(y, f)
    return IndicatorSeries(
        dates=dates,
        values=coef[0] + coef[1] * f,
        variant=Variant.BASELINE,
        coefficients=coef[None, :],
        regimes=np.zeros(len(f), dtype=int),
        factor=f,
        headline=y,
        std_errors=se[None, :],
        error_variance=np.array([s2]),
        fallback=np.zeros(1, dtype=bool),
        vintage=vintage,
    )


def block_diagonal_ols(headline, factors: list[np.ndarray]) -> np.ndarray:
    """Stacked regression on block-diagonal intercept and factor columns.

    Returns a ``(K, 2)`` array of ``(alpha_k, beta_k)``.
    """
    y = as_vector(headline, "headline")
    sizes = [len(f) for f in factors]
    if sum(sizes) != len(y):
        raise ValidationError("segment factors do not cover the headline sample")
    K = len(factors)
    D = np.zeros((len(y), 2 * K))
    lo = 0
    for k, f in enumerate(factors):
        D[lo:lo + len(f), k] = 1.0
        D[lo:lo + len(f), K + k] = f
        lo += len(f)
    coef, *_ = np.linalg.lstsq(D, y, rcond=None)
    return np.column_stack([coef[:K], coef[K:]])


def fit_sc(headline, break_model: BreakModel, vintage: str | None = None) -> IndicatorSeries:
    """Per-segment OLS on segment-specific factors, cross-checked against the stacked form."""
    if not break_model.segment_factors:
        raise ValidationError("break model carries no segment factor estimates")
    bounds = break_model.bounds
    factors = [fe.factors[:, 0] for fe in break_model.segment_factors]
    for (lo, hi), f in zip(bounds, factors):
        if hi - lo < 3:
            raise ValidationError(f"segment [{lo}, {hi}) has fewer than 3 observations")
        if len(f) != hi - lo:
            raise ValidationError("segment factors do not match the break dates")
    f = np.concatenate(factors)
    y = _headline(headline, break_model.dates, len(f))
    K = len(bounds)
    coef = np.empty((K, 2))
    se = np.empty((K, 2))
    s2 = np.empty(K)
    for k, (lo, hi) in enumerate(bounds):
        coef[k], se[k], s2[k] = _ols(y[lo:hi], f[lo:hi])
    stacked = block_diagonal_ols(y, factors)
    scale = max(1.0, float(np.abs(coef).max()))
    if not np.allclose(stacked, coef, atol=1e-8 * scale, rtol=0):
        raise NumericalError("per-segment and block-diagonal estimates disagree")
    regimes = break_model.labels()
    return IndicatorSeries(
        dates=break_model.dates,
        values=coef[regimes, 0] + coef[regimes, 1] * f,
        variant=Variant.SC,
        coefficients=coef,
        regimes=regimes,
        factor=f,
        headline=y,
        std_errors=se,
        error_variance=s2,
        fallback=np.zeros(K, dtype=bool),
        vintage=vintage,
    )


def fit_ms(headline, ms_model: MsModel, weighted: bool = False, vintage: str | None = None) -> IndicatorSeries:
    """Per-regime OLS on the regime-specific factor under the argmax smoothed regime.

    With ``weighted=True`` each regime's coefficients come from a regression
    over all periods weighted by the smoothed probabilities; the fitted path
    still uses the argmax regime. A regime with fewer than three assigned
    periods takes the pooled coefficients and is flagged in ``fallback``.
    """
    regimes = ms_model.regimes
    paths = ms_model.regime_factor_paths
    T = len(regimes)
    f = paths[np.arange(T), regimes]
    y = _headline(headline, ms_model.dates, T)
    M = ms_model.M
    coef = np.empty((M, 2))
    se = np.empty((M, 2))
    s2 = np.empty(M)
    fallback = np.zeros(M, dtype=bool)
    pooled = None
    for j in range(M):
        rows = regimes == j
        if rows.sum() < 3:
            if pooled is None:
                pooled = _ols(y, f)
            coef[j], se[j], s2[j] = pooled
            fallback[j] = True
        elif weighted:
            coef[j], se[j], s2[j] = _ols(y, paths[:, j], ms_model.smoothed_probs[:, j])
        else:
            coef[j], se[j], s2[j] = _ols(y[rows], f[rows])
    return IndicatorSeries(
        dates=ms_model.dates,
        values=coef[regimes, 0] + coef[regimes, 1] * f,
        variant=Variant.MS,
        coefficients=coef,
        regimes=regimes,
        factor=f,
        headline=y,
        std_errors=se,
        error_variance=s2,
        fallback=fallback,
        vintage=vintage,
    )


def regime_variance_diagnostic(model=None, *, factor=None, labels=None) -> pd.DataFrame:
    """Pairwise F-ratios of factor variances across regimes (heuristic).

    Accepts a :class:`BreakModel` (full-sample factor split at the breaks), an
    :class:`MsModel` (regime factor under the argmax regime) or explicit
    ``factor`` and ``labels``. P-values are two-sided.
    """
    if isinstance(model, BreakModel):
        factor, labels = model.factor_path[:, 0], model.labels()
    elif isinstance(model, MsModel):
        factor, labels = model.regime_factors, model.regimes
    elif model is not None:
        raise ValidationError("model must be a BreakModel or an MsModel")
    factor = as_vector(factor, "factor")
    labels = np.asarray(labels, dtype=int).reshape(-1)
    if labels.shape != factor.shape:
        raise ValidationError("factor and labels differ in length")
    cols = ["regime_a", "regime_b", "n_a", "n_b", "var_a", "var_b", "f_ratio", "p_value"]
    rows = []
    present = [j for j in np.unique(labels) if np.sum(labels == j) >= 2]
    for a, b in combinations(present, 2):
        xa, xb = factor[labels == a], factor[labels == b]
        va, vb = np.var(xa, ddof=1), np.var(xb, ddof=1)
        ratio = va / vb if vb > 0 else np.inf
        d1, d2 = len(xa) - 1, len(xb) - 1
        p = float(min(1.0, 2 * min(stats.f.cdf(ratio, d1, d2), stats.f.sf(ratio, d1, d2))))
        rows.append([int(a) + 1, int(b) + 1, len(xa), len(xb), va, vb, ratio, p])
    return pd.DataFrame(rows, columns=cols)


class CoreInflationIndicator(RegressorMixin, BaseEstimator):
    """Factor model plus second-step regression in one estimator.

    Parameters
    ----------
    variant : {"baseline", "sc", "ms"}, default="baseline"
    n_factors : int, default=1
    n_regimes : int, default=2
        Markov regimes for ``variant="ms"``.
    epsilon, max_breaks, alpha, n_breaks :
        Break-search settings for ``variant="sc"``.
    n_starts, max_iter, tol, random_state :
        EM settings for ``variant="ms"``.
    """

    def __init__(self, variant="baseline", n_factors=1, n_regimes=2, epsilon=0.15, max_breaks=5,
                 alpha=0.05, n_breaks=None, n_starts=10, max_iter=500, tol=1e-6, random_state=0):
        self.variant = variant
        self.n_factors = n_factors
        self.n_regimes = n_regimes
        self.epsilon = epsilon
        self.max_breaks = max_breaks
        self.alpha = alpha
        self.n_breaks = n_breaks
        self.n_starts = n_starts
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y):
        values, dates = unwrap_panel(X)
        variant = str(self.variant).lower()
        if variant == "baseline":
            est = estimate_factors(values, self.n_factors)
            self.factor_model_ = est
            self.indicator_ = fit_baseline(y, est.factors[:, 0], dates)
        elif variant == "sc":
            sb = StructuralBreakFactorModel(self.n_factors, epsilon=self.epsilon, max_breaks=self.max_breaks,
                                            alpha=self.alpha, n_breaks=self.n_breaks).fit(X)
            self.factor_model_ = sb.break_model_
            self.indicator_ = fit_sc(y, sb.break_model_)
        elif variant == "ms":
            self.factor_model_ = em_fit(X, self.n_regimes, self.n_factors, self.max_iter, self.tol,
                                        self.n_starts, self.random_state)
            self.indicator_ = fit_ms(y, self.factor_model_)
        else:
            raise ValidationError(f"unknown variant {self.variant!r}")
        self.coef_ = self.indicator_.coefficients
        self.n_features_in_ = values.shape[1]
        return self

    def predict(self, X):
        """Indicator on a panel using the fitted loadings and coefficients.

        For the MS variant regimes are re-inferred on ``X`` with the fitted
        parameters; the SC variant requires the training sample length.
        """
        check_is_fitted(self, "indicator_")
        values, _ = unwrap_panel(X)
        ind = self.indicator_
        if ind.variant is Variant.BASELINE:
            f = project_factor(self.factor_model_.loadings[:, :1], values)[:, 0]
            return ind.coefficients[0, 0] + ind.coefficients[0, 1] * f
        if ind.variant is Variant.MS:
            m = self.factor_model_
            regimes = np.argmax(filter_with_model(m, values)[1], axis=1)
            paths = np.column_stack([project_factor(L, values)[:, 0] for L in m.loadings])
            f = paths[np.arange(len(regimes)), regimes]
            return ind.coefficients[regimes, 0] + ind.coefficients[regimes, 1] * f
        if values.shape[0] != len(ind.values):
            raise ValidationError("the SC indicator can only be evaluated on its training sample")
        parts = [project_factor(fe.loadings[:, :1], values[lo:hi])[:, 0]
                 for fe, (lo, hi) in zip(self.factor_model_.segment_factors, self.factor_model_.bounds)]
        f = np.concatenate(parts)
        return ind.coefficients[ind.regimes, 0] + ind.coefficients[ind.regimes, 1] * f
