"""Markov-switching high-dimensional factor model.

Each regime ``j`` has its own loadings ``L_j`` and all regimes share a
diagonal idiosyncratic covariance ``Psi``, so that ``x_t | S_t = j`` is
``N(0, L_j L_j' + Psi)``. Parameters are estimated by EM with the factors
treated as latent variables alongside the regime path.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from numba import njit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_matrix, check_probability_vector, check_transition, unwrap_panel
from .exceptions import NumericalError, ValidationError
from .factors import estimate_factors, project_factor

logger = logging.getLogger(__name__)

__all__ = [
    "MsModel",
    "MarkovSwitchingFactorModel",
    "hamilton_filter",
    "kim_smoother",
    "ergodic_probs",
    "regime_log_densities",
    "em_fit",
]

_LOG2PI = math.log(2.0 * math.pi)
_PSI_FLOOR = 1e-6


@njit(cache=True)
def _forward_kernel(dens, P, initial):
    T, M = dens.shape
    filtered = np.empty((T, M))
    predicted = np.empty((T, M))
    norm = np.empty(T)
    pred = initial.copy()
    for t in range(T):
        c = 0.0
        for j in range(M):
            predicted[t, j] = pred[j]
            filtered[t, j] = pred[j] * dens[t, j]
            c += filtered[t, j]
        if not c > 0.0:
            return filtered, predicted, norm, t
        norm[t] = c
        for j in range(M):
            filtered[t, j] /= c
        for j in range(M):
            acc = 0.0
            for i in range(M):
                acc += filtered[t, i] * P[i, j]
            pred[j] = acc
    return filtered, predicted, norm, -1


def _forward(dens: np.ndarray, P: np.ndarray, initial: np.ndarray):
    filtered, predicted, norm, bad = _forward_kernel(
        np.ascontiguousarray(dens), np.ascontiguousarray(P), np.ascontiguousarray(initial, dtype=float))
    if bad >= 0:
        raise NumericalError(f"zero predictive density at t={bad}")
    return filtered, predicted, norm


def hamilton_filter(densities, P, initial, log: bool = False) -> tuple[np.ndarray, float]:
    """Forward filter for regime probabilities.

    Parameters
    ----------
    densities : array of shape (T, M)
        Observation densities per regime (log densities when ``log=True``).
    P : array of shape (M, M)
        Row-stochastic transition matrix, ``P[i, j] = Pr(S_t = j | S_{t-1} = i)``.
    initial : array of shape (M,)
        Regime distribution for the first period.

    Returns
    -------
    filtered : ndarray of shape (T, M)
    loglik : float
    """
    P = check_transition(P)
    initial = check_probability_vector(initial, "initial")
    D = as_matrix(densities, "densities") if not log else np.atleast_2d(np.asarray(densities, dtype=float))
    if D.shape[1] != P.shape[0] or initial.shape[0] != P.shape[0]:
        raise ValidationError("densities, P and initial disagree on the number of regimes")
    if log:
        if np.any(np.isnan(D)) or np.any(np.isposinf(D)):
            raise ValidationError("log densities must be finite or -inf")
        shift = D.max(axis=1)
        if np.any(~np.isfinite(shift)):
            raise ValidationError(f"all regimes have zero density at t={int(np.flatnonzero(~np.isfinite(shift))[0])}")
        dens = np.exp(D - shift[:, None])
    else:
        if np.any(D < 0):
            raise ValidationError("densities must be non-negative")
        zero = np.flatnonzero(~(D.max(axis=1) > 0))
        if zero.size:
            raise ValidationError(f"all regimes have zero density at t={int(zero[0])}")
        shift = np.zeros(D.shape[0])
        dens = D
    filtered, _, norm = _forward(dens, P, initial)
    return filtered, float(np.sum(np.log(norm)) + shift.sum())


@njit(cache=True)
def _backward_kernel(filtered, P):
    T, M = filtered.shape
    smoothed = np.empty((T, M))
    joint = np.zeros((M, M))
    ratio = np.empty(M)
    smoothed[T - 1] = filtered[T - 1]
    for t in range(T - 2, -1, -1):
        for j in range(M):
            pred = 0.0
            for i in range(M):
                pred += filtered[t, i] * P[i, j]
            ratio[j] = smoothed[t + 1, j] / max(pred, 1e-300)
        for i in range(M):
            acc = 0.0
            for j in range(M):
                v = filtered[t, i] * P[i, j] * ratio[j]
                joint[i, j] += v
                acc += v
            smoothed[t, i] = acc
    return smoothed, joint


def _backward(filtered: np.ndarray, P: np.ndarray):
    return _backward_kernel(np.ascontiguousarray(filtered), np.ascontiguousarray(P))


def kim_smoother(filtered_probs, P) -> np.ndarray:
    """Backward pass turning filtered into full-sample (smoothed) probabilities."""
    P = check_transition(P)
    F = as_matrix(filtered_probs, "filtered probabilities")
    if F.shape[1] != P.shape[0]:
        raise ValidationError("filtered probabilities and P disagree on the number of regimes")
    return _backward(F, P)[0]


def _stationary(P: np.ndarray) -> np.ndarray:
    M = P.shape[0]
    A = np.vstack([np.eye(M) - P.T, np.ones((1, M))])
    e = np.zeros(M + 1)
    e[-1] = 1.0
    pi = np.linalg.lstsq(A, e, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def ergodic_probs(P) -> np.ndarray:
    """Stationary distribution ``pi`` with ``pi' P = pi'`` for a row-stochastic ``P``.

    Solves ``[I - P'; 1'] pi = e_{M+1}`` in least squares.
    """
    P = check_transition(P)
    M = P.shape[0]
    if M > 1 and np.linalg.matrix_rank(np.eye(M) - P.T, tol=1e-10) < M - 1:
        raise ValidationError("transition matrix is reducible: stationary distribution is not unique")
    return _stationary(P)


def regime_log_densities(X, loadings, psi) -> np.ndarray:
    """``log N(x_t; 0, L_j L_j' + diag(psi))`` for every period and regime."""
    X = as_matrix(X, "panel")
    T, N = X.shape
    psi = np.asarray(psi, dtype=float)
    Xs = X / psi
    base = np.einsum("tn,tn->t", X, Xs)
    logdet_psi = np.log(psi).sum()
    out = np.empty((T, len(loadings)))
    for j, L in enumerate(loadings):
        r = L.shape[1]
        A = np.eye(r) + (L.T / psi) @ L
        cA = np.linalg.cholesky(A)
        u = np.linalg.solve(cA, (Xs @ L).T)
        quad = base - np.einsum("rt,rt->t", u, u)
        logdet = 2.0 * np.log(np.diag(cA)).sum() + logdet_psi
        out[:, j] = -0.5 * (N * _LOG2PI + logdet + quad)
    return out


@dataclass
class _Params:
    loadings: list[np.ndarray]
    psi: np.ndarray
    P: np.ndarray


@dataclass
class _EStep:
    filtered: np.ndarray
    smoothed: np.ndarray
    joint: np.ndarray
    loglik: float
    initial: np.ndarray


def _e_step(X: np.ndarray, p: _Params) -> _EStep:
    logd = regime_log_densities(X, p.loadings, p.psi)
    shift = logd.max(axis=1)
    initial = _stationary(p.P)
    filtered, _, norm = _forward(np.exp(logd - shift[:, None]), p.P, initial)
    smoothed, joint = _backward(filtered, p.P)
    return _EStep(filtered, smoothed, joint, float(np.log(norm).sum() + shift.sum()), initial)


def _transition_objective(P: np.ndarray, joint: np.ndarray, gamma0: np.ndarray) -> float:
    pos = joint > 0
    if np.any(P[pos] <= 0):
        return -np.inf
    val = float(np.sum(joint[pos] * np.log(P[pos])))
    pi = _stationary(P)
    w = gamma0 > 0
    if np.any(pi[w] <= 0):
        return -np.inf
    return val + float(np.sum(gamma0[w] * np.log(pi[w])))


def _m_step(X: np.ndarray, p: _Params, e: _EStep) -> _Params:
    T, N = X.shape
    gamma = e.smoothed
    new_L, resid = [], np.zeros(N)
    for j, L in enumerate(p.loadings):
        n = gamma[:, j].sum()
        S = (X * gamma[:, j:j + 1]).T @ X / n
        r = L.shape[1]
        beta = np.linalg.solve(np.eye(r) + (L.T / p.psi) @ L, L.T / p.psi)
        SB = S @ beta.T
        Eff = np.eye(r) - beta @ L + beta @ SB
        Ln = np.linalg.solve(Eff, SB.T).T
        new_L.append(Ln)
        resid += n * (np.diag(S) - np.einsum("nr,nr->n", Ln, SB))
    psi = np.maximum(resid / gamma.sum(), _PSI_FLOOR)

    # transition update; backtrack towards the old matrix if the ergodic
    # initial-state term would lower the expected complete-data likelihood
    counts = e.joint
    rows = counts.sum(axis=1, keepdims=True)
    cand = np.where(rows > 0, counts / np.where(rows > 0, rows, 1.0), p.P)
    old = _transition_objective(p.P, counts, gamma[0])
    P_new, step = cand, 1.0
    while _transition_objective(P_new, counts, gamma[0]) < old and step > 1e-6:
        step *= 0.5
        P_new = p.P + step * (cand - p.P)
    if _transition_objective(P_new, counts, gamma[0]) < old:
        P_new = p.P
    return _Params(new_L, psi, P_new / P_new.sum(axis=1, keepdims=True))


def _init_from_labels(X: np.ndarray, labels: np.ndarray, M: int, r: int, stay: float = 0.9) -> _Params | None:
    T, N = X.shape
    loadings, resid = [], np.zeros(N)
    for j in range(M):
        rows = X[labels == j]
        if rows.shape[0] < r + 2:
            return None
        S = rows.T @ rows / rows.shape[0]
        w, V = np.linalg.eigh(S)
        w, V = w[::-1][:r], V[:, ::-1][:, :r]
        L = V * np.sqrt(np.maximum(w, 1e-8))
        loadings.append(L)
        resid += rows.shape[0] * np.clip(np.diag(S) - np.einsum("nr,nr->n", L, L), 0.0, None)
    psi = np.maximum(resid / T, 0.05)
    if M == 1:
        P = np.ones((1, 1))
    else:
        P = np.full((M, M), (1.0 - stay) / (M - 1))
        np.fill_diagonal(P, stay)
    return _Params(loadings, psi, P)


def _random_labels(T: int, M: int, rng: np.random.Generator) -> np.ndarray:
    n_seg = M + int(rng.integers(0, 2 * M + 1))
    cuts = np.sort(rng.choice(np.arange(1, T), size=min(n_seg - 1, T - 1), replace=False))
    seg_labels = np.concatenate([rng.permutation(M), rng.integers(0, M, size=max(0, len(cuts) + 1 - M))])
    labels = np.empty(T, dtype=int)
    for k, (lo, hi) in enumerate(zip([0, *cuts], [*cuts, T])):
        labels[lo:hi] = seg_labels[k]
    return labels


def _dp_labels(X: np.ndarray, M: int) -> np.ndarray | None:
    from .breaks import dp_break_search

    eps = min(0.05, 1.0 / (2 * M))
    try:
        F = estimate_factors(X, 1).factors
        bm = dp_break_search(F, M - 1, eps)
    except (ValidationError, np.linalg.LinAlgError):
        return None
    return bm.labels()


def _run_em(X: np.ndarray, params: _Params, max_iter: int, tol: float, state=None):
    if state is None:
        e = _e_step(X, params)
        history = [e.loglik]
    else:
        e, history = state[0], list(state[1])
    converged = False
    for _ in range(max_iter):
        params = _m_step(X, params, e)
        e = _e_step(X, params)
        history.append(e.loglik)
        if abs(history[-1] - history[-2]) <= tol * max(1.0, abs(history[-1])):
            converged = True
            break
    return params, e, history, converged


@dataclass
class MsModel:
    """Fitted Markov-switching factor model.

    ``loadings[j]`` is scaled so each column has mean square one; the regime
    factor variances are in ``factor_var[j]`` so that the regime covariance is
    ``loadings[j] diag(factor_var[j]) loadings[j]' + diag(idio_var)``.
    """

    M: int
    loadings: list[np.ndarray]
    idio_var: np.ndarray
    factor_var: np.ndarray
    P: np.ndarray
    ergodic: np.ndarray
    filtered_probs: np.ndarray
    smoothed_probs: np.ndarray
    regime_factor_paths: np.ndarray
    loglik: float
    loglik_history: list[float] = field(default_factory=list)
    converged: bool = True
    n_iter: int = 0
    start_index: int = 0
    dates: pd.PeriodIndex | None = None

    @property
    def regimes(self) -> np.ndarray:
        """Most probable regime per period under the smoothed probabilities."""
        return np.argmax(self.smoothed_probs, axis=1)

    @property
    def regime_factors(self) -> np.ndarray:
        return self.regime_factor_paths[np.arange(len(self.regimes)), self.regimes]

    @property
    def raw_loadings(self) -> list[np.ndarray]:
        return [L * np.sqrt(v) for L, v in zip(self.loadings, self.factor_var)]

    def common_component(self, X) -> np.ndarray:
        """Projection of each ``x_t`` on the column space of its argmax regime loadings."""
        X = as_matrix(X, "panel")
        out = np.empty_like(X)
        for j, L in enumerate(self.loadings):
            rows = self.regimes == j
            if rows.any():
                out[rows] = project_factor(L, X[rows]) @ L.T
        return out

    def permuted(self, order) -> MsModel:
        """Same model with regime ``k`` of the result being regime ``order[k]`` here."""
        order = list(order)
        if sorted(order) != list(range(self.M)):
            raise ValidationError(f"{order} is not a permutation of 0..{self.M - 1}")
        return replace(
            self,
            loadings=[self.loadings[k] for k in order],
            factor_var=self.factor_var[order],
            P=self.P[np.ix_(order, order)],
            ergodic=self.ergodic[order],
            filtered_probs=self.filtered_probs[:, order],
            smoothed_probs=self.smoothed_probs[:, order],
            regime_factor_paths=self.regime_factor_paths[:, order],
        )

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "loadings": [L.tolist() for L in self.loadings],
            "idio_var": self.idio_var.tolist(),
            "factor_var": self.factor_var.tolist(),
            "transition": self.P.tolist(),
            "ergodic": self.ergodic.tolist(),
            "loglik": self.loglik,
            "loglik_history": list(self.loglik_history),
            "converged": self.converged,
            "n_iter": self.n_iter,
            "start_index": self.start_index,
            "dates": None if self.dates is None else [str(d) for d in self.dates],
            "filtered_probs": self.filtered_probs.tolist(),
            "smoothed_probs": self.smoothed_probs.tolist(),
        }

    def probabilities_frame(self, kind: str = "smoothed") -> pd.DataFrame:
        """Plot-ready table ``date, prob_regime_1 .. prob_regime_M``."""
        probs = self.smoothed_probs if kind == "smoothed" else self.filtered_probs
        idx = self.dates.strftime("%Y-%m") if self.dates is not None else np.arange(1, probs.shape[0] + 1)
        frame = pd.DataFrame(probs, columns=[f"prob_regime_{j + 1}" for j in range(self.M)])
        frame.insert(0, "date", idx)
        return frame


def _finalize(X: np.ndarray, params: _Params, e: _EStep, history, converged, start, dates) -> MsModel:
    M = len(params.loadings)
    var = np.array([np.sum(L**2, axis=0) / L.shape[0] for L in params.loadings])
    order = np.argsort(var.sum(axis=1), kind="stable")
    loadings = []
    for j in order:
        L = params.loadings[j] / np.sqrt(var[j])
        L = L * np.where(L.sum(axis=0) < 0, -1.0, 1.0)
        loadings.append(L)
    paths = np.column_stack([project_factor(L, X)[:, 0] for L in loadings])
    P = params.P[np.ix_(order, order)]
    return MsModel(
        M=M,
        loadings=loadings,
        idio_var=params.psi.copy(),
        factor_var=var[order],
        P=P,
        ergodic=_stationary(P),
        filtered_probs=e.filtered[:, order],
        smoothed_probs=e.smoothed[:, order],
        regime_factor_paths=paths,
        loglik=e.loglik,
        loglik_history=list(history),
        converged=converged,
        n_iter=len(history) - 1,
        start_index=start,
        dates=dates,
    )


def _fit_single_regime(X: np.ndarray, r: int, dates) -> MsModel:
    est = estimate_factors(X, r)
    T, N = X.shape
    psi = np.maximum(np.mean((X - est.common_component) ** 2, axis=0), _PSI_FLOOR)
    var = np.sum(est.loadings**2, axis=0) / N
    L = est.loadings / np.sqrt(var)
    logd = regime_log_densities(X, [est.loadings], psi)
    ones = np.ones((T, 1))
    return MsModel(
        M=1,
        loadings=[L],
        idio_var=psi,
        factor_var=var[None, :],
        P=np.ones((1, 1)),
        ergodic=np.ones(1),
        filtered_probs=ones,
        smoothed_probs=ones.copy(),
        regime_factor_paths=project_factor(L, X)[:, :1],
        loglik=float(logd.sum()),
        loglik_history=[float(logd.sum())],
        converged=True,
        n_iter=0,
        dates=dates,
    )


def _params_from_model(model: MsModel) -> _Params:
    return _Params([L.copy() for L in model.raw_loadings], model.idio_var.copy(), model.P.copy())


def em_fit(X, M: int, r: int = 1, max_iter: int = 500, tol: float = 1e-6, n_starts: int = 10,
           seed: int = 0, init: MsModel | None = None, n_jobs: int = 1, screen_iter: int = 25) -> MsModel:
    """Fit a Markov-switching factor model by EM.

    Starting points are one segmentation from the DP break search plus
    ``n_starts`` random segmentations (or only ``init`` when a previous fit is
    supplied as a warm start). Every start first runs ``screen_iter`` EM
    iterations; the one with the highest log-likelihood (ties to the lowest
    start index) is then iterated to convergence. Regimes are labelled by
    increasing factor variance.

    With ``M == 1`` the model is the static principal-components solution.
    """
    X, dates = unwrap_panel(X)
    T, N = X.shape
    if M < 1 or r < 1:
        raise ValidationError("M and r must be at least 1")
    if r > min(N, T):
        raise ValidationError(f"r={r} exceeds min(N, T)")
    if M == 1:
        return _fit_single_regime(X, r, dates)

    starts: list[_Params | None] = []
    if init is not None:
        if init.M != M or init.loadings[0].shape != (N, r):
            raise ValidationError("warm start does not match M, r or the panel width")
        starts.append(_params_from_model(init))
    else:
        lab = _dp_labels(X, M)
        starts.append(None if lab is None else _init_from_labels(X, lab, M, r))
        rng = np.random.default_rng(seed)
        for _ in range(n_starts):
            starts.append(_init_from_labels(X, _random_labels(T, M, rng), M, r))

    def degenerate(e: _EStep) -> bool:
        return bool(np.any(e.smoothed.sum(axis=0) < r + 2))

    screen = min(screen_iter, max_iter)

    def run(item):
        k, p0 = item
        if p0 is None:
            return k, None
        try:
            res = _run_em(X, p0, screen, tol)
        except (NumericalError, np.linalg.LinAlgError) as exc:
            logger.debug("start %d failed: %s", k, exc)
            return k, None
        return k, None if degenerate(res[1]) else res

    items = list(enumerate(starts))
    if n_jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(it) for it in items]
    ranked = sorted((res[1].loglik, -k, k, res) for k, res in results if res is not None)
    for _, _, k, (params, e, hist, conv) in reversed(ranked):
        if not conv and max_iter > screen:
            try:
                params, e, hist, conv = _run_em(X, params, max_iter - screen, tol, (e, hist))
            except (NumericalError, np.linalg.LinAlgError) as exc:
                logger.debug("start %d failed after screening: %s", k, exc)
                continue
            if degenerate(e):
                continue
        if not conv:
            logger.warning("EM did not converge in %d iterations", max_iter)
        return _finalize(X, params, e, hist, conv, k, dates)
    raise NumericalError(f"all {len(starts)} EM starts failed or produced a degenerate regime")


def filter_with_model(model: MsModel, X) -> tuple[np.ndarray, np.ndarray, float]:
    """Filtered and smoothed probabilities of ``X`` under fitted parameters."""
    X = as_matrix(X, "panel")
    if model.M == 1:
        ones = np.ones((X.shape[0], 1))
        ll = regime_log_densities(X, model.raw_loadings, model.idio_var).sum()
        return ones, ones.copy(), float(ll)
    e = _e_step(X, _params_from_model(model))
    return e.filtered, e.smoothed, e.loglik


class MarkovSwitchingFactorModel(TransformerMixin, BaseEstimator):
    """Scikit-learn wrapper around :func:`em_fit`.

    Parameters
    ----------
    n_regimes : int, default=2
    n_factors : int, default=1
    max_iter : int, default=500
    tol : float, default=1e-6
        Relative log-likelihood change at which EM stops.
    n_starts : int, default=10
        Random segmentations tried besides the break-search start.
    random_state : int, default=0
    n_jobs : int, default=1
    """

    def __init__(self, n_regimes=2, n_factors=1, max_iter=500, tol=1e-6, n_starts=10,
                 random_state=0, n_jobs=1):
        self.n_regimes = n_regimes
        self.n_factors = n_factors
        self.max_iter = max_iter
        self.tol = tol
        self.n_starts = n_starts
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y=None, init: MsModel | None = None):
        self.model_ = em_fit(X, self.n_regimes, self.n_factors, self.max_iter, self.tol,
                             self.n_starts, self.random_state, init=init, n_jobs=self.n_jobs)
        self.transition_ = self.model_.P
        self.ergodic_ = self.model_.ergodic
        self.n_features_in_ = self.model_.idio_var.shape[0]
        return self

    def predict_proba(self, X):
        """Smoothed regime probabilities of ``X`` under the fitted parameters."""
        check_is_fitted(self, "model_")
        return filter_with_model(self.model_, unwrap_panel(X)[0])[1]

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def transform(self, X):
        """Regime-specific factor paths, one column per regime."""
        check_is_fitted(self, "model_")
        X = unwrap_panel(X)[0]
        return np.column_stack([project_factor(L, X)[:, 0] for L in self.model_.loadings])

    def score(self, X, y=None):
        check_is_fitted(self, "model_")
        return filter_with_model(self.model_, unwrap_panel(X)[0])[2]
