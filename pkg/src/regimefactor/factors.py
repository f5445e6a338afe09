"""Static principal-components factor estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ValidationError

__all__ = [
    "FactorEstimate",
    "FactorPCA",
    "estimate_factors",
    "ic_num_factors",
    "project_factor",
]


@dataclass(frozen=True)
class FactorEstimate:
    """Principal-components solution on one (sub)sample.

    ``factors`` satisfy ``F'F / T = I`` and ``loadings = X'F / T``.
    ``eigenvalues`` are those of ``X'X / T`` in non-increasing order.
    """

    factors: np.ndarray
    loadings: np.ndarray
    eigenvalues: np.ndarray
    segment: tuple[int, int] | None = None

    @property
    def r(self) -> int:
        return self.factors.shape[1]

    @property
    def common_component(self) -> np.ndarray:
        return self.factors @ self.loadings.T

    @property
    def explained_share(self) -> float:
        total = self.eigenvalues.sum()
        return float(self.eigenvalues[: self.r].sum() / total) if total > 0 else 0.0

    @property
    def residual_variance(self) -> float:
        """Mean squared residual per period, summed over series."""
        return float(self.eigenvalues.sum() - self.eigenvalues[: self.r].sum())


def _check_panel(X) -> np.ndarray:
    try:
        return check_array(X, dtype=np.float64, ensure_min_samples=1, ensure_all_finite=True)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def _eig_desc(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w, v = np.linalg.eigh(S)
    order = np.argsort(w)[::-1]
    return np.clip(w[order], 0.0, None), v[:, order]


def estimate_factors(X, r: int = 1, segment: tuple[int, int] | None = None) -> FactorEstimate:
    """Principal-components factors of a column-standardized ``T x N`` matrix.

    The eigenproblem is solved on whichever of ``XX'`` and ``X'X`` is smaller.
    Each factor is signed so that its loading vector has a non-negative sum.
    """
    X = _check_panel(X)
    T, N = X.shape
    if not 1 <= r <= min(N, T):
        raise ValidationError(f"r={r} must lie in [1, min(N, T)] = [1, {min(N, T)}]")
    if T <= N:
        w, U = _eig_desc(X @ X.T / T)
        eig = w[: min(N, T)]
        if not eig[r - 1] > 1e-12 * max(eig[0], np.finfo(float).tiny):
            raise ValidationError(f"r={r} exceeds the numerical rank of the panel")
        F = np.sqrt(T) * U[:, :r]
        L = X.T @ F / T
    else:
        w, V = _eig_desc(X.T @ X / T)
        eig = w[: min(N, T)]
        if not eig[r - 1] > 1e-12 * max(eig[0], np.finfo(float).tiny):
            raise ValidationError(f"r={r} exceeds the numerical rank of the panel")
        L = V[:, :r] * np.sqrt(eig[:r])
        F = X @ V[:, :r] / np.sqrt(eig[:r])
    signs = np.where(L.sum(axis=0) < 0, -1.0, 1.0)
    return FactorEstimate(F * signs, L * signs, eig, segment)


def ic_num_factors(X, r_max: int, criterion: str = "ICp2") -> int:
    """Number of factors minimising an ICp-type information criterion.

    ``criterion`` is ``"ICp1"`` or ``"ICp2"``; ties go to the smaller count.
    """
    X = _check_panel(X)
    T, N = X.shape
    if not 1 <= r_max <= min(N, T) // 2:
        raise ValidationError(f"r_max={r_max} must lie in [1, min(N, T)/2] = [1, {min(N, T) // 2}]")
    NT, NpT = N * T, N + T
    if criterion == "ICp1":
        penalty = NpT / NT * np.log(NT / NpT)
    elif criterion == "ICp2":
        penalty = NpT / NT * np.log(min(N, T))
    else:
        raise ValidationError(f"unknown criterion {criterion!r}")
    small = X.T @ X if T > N else X @ X.T
    eig = np.clip(np.linalg.eigvalsh(small)[::-1], 0.0, None) / T
    total = eig.sum()
    # residuals below machine precision relative to the total are treated as zero
    floor = max(total, np.finfo(float).tiny) * 1e-14
    best_r, best_ic = 1, np.inf
    for r in range(1, r_max + 1):
        v = max((total - eig[:r].sum()) / N, floor / N)
        ic = np.log(v) + r * penalty
        if ic < best_ic - 1e-12:
            best_r, best_ic = r, ic
    return best_r


def project_factor(loadings, x) -> np.ndarray:
    """Least-squares factor values ``(L'L)^{-1} L'x`` for a vector or a ``T x N`` block."""
    L = np.asarray(loadings, dtype=float)
    if L.ndim == 1:
        L = L[:, None]
    if np.linalg.matrix_rank(L) < L.shape[1]:
        raise ValidationError("loadings are rank deficient")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != L.shape[0]:
        raise ValidationError(f"x has {x.shape[-1]} series but loadings have {L.shape[0]} rows")
    G = L.T @ L
    return np.linalg.solve(G, L.T @ x.T).T


class FactorPCA(TransformerMixin, BaseEstimator):
    """Principal-components factor model as a scikit-learn transformer.

    Parameters
    ----------
    n_factors : int, default=1
        Number of static factors.

    Attributes
    ----------
    factors_ : ndarray of shape (n_samples, n_factors)
    loadings_ : ndarray of shape (n_features, n_factors)
    eigenvalues_ : ndarray
    """

    def __init__(self, n_factors: int = 1):
        self.n_factors = n_factors

    def fit(self, X, y=None):
        est = estimate_factors(X, self.n_factors)
        self.estimate_ = est
        self.factors_ = est.factors
        self.loadings_ = est.loadings
        self.eigenvalues_ = est.eigenvalues
        self.n_features_in_ = est.loadings.shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "loadings_")
        X = _check_panel(X)
        return project_factor(self.loadings_, X)

    def inverse_transform(self, F):
        check_is_fitted(self, "loadings_")
        return np.asarray(F, dtype=float) @ self.loadings_.T
