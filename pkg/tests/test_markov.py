from __future__ import annotations

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from regimefactor import NumericalError, ValidationError
from regimefactor.factors import estimate_factors
from regimefactor.indicator import fit_ms
from regimefactor.markov import (
    MarkovSwitchingFactorModel,
    em_fit,
    ergodic_probs,
    filter_with_model,
    hamilton_filter,
    kim_smoother,
    regime_log_densities,
)
from regimefactor.simulate import DgpSpec, simulate_panel

from .oracles import enumerate_paths


def _random_P(rng, M):
    P = rng.uniform(0.05, 1.0, (M, M)) + np.eye(M) * rng.uniform(0, 3)
    return P / P.sum(axis=1, keepdims=True)


@pytest.fixture(scope="module")
def two_regime():
    spec = DgpSpec(n_series=15, n_periods=240, transition=[[0.97, 0.03], [0.03, 0.97]],
                   factor_var=[1.0, 4.0], loading_flip=0.5)
    return simulate_panel(spec, seed=11)


@pytest.fixture(scope="module")
def fitted(two_regime):
    panel, _ = two_regime
    return em_fit(panel, 2, n_starts=3, seed=0)


def test_filter_and_smoother_match_enumeration_t5(rng):
    dens = rng.uniform(0.05, 2.0, (5, 2))
    P = _random_P(rng, 2)
    init = np.array([0.3, 0.7])
    filt, ll = hamilton_filter(dens, P, init)
    f_ref, s_ref, ll_ref = enumerate_paths(dens, P, init)
    np.testing.assert_allclose(filt, f_ref, atol=1e-12)
    np.testing.assert_allclose(kim_smoother(filt, P), s_ref, atol=1e-12)
    assert ll == pytest.approx(ll_ref, abs=1e-12)
    filt_log, ll_log = hamilton_filter(np.log(dens) - 700.0, P, init, log=True)
    np.testing.assert_allclose(filt_log, f_ref, atol=1e-12)
    assert ll_log == pytest.approx(ll_ref - 3500.0, rel=1e-12)


def test_single_regime_filter(rng):
    dens = rng.uniform(0.1, 1.0, (6, 1))
    filt, ll = hamilton_filter(dens, [[1.0]], [1.0])
    np.testing.assert_array_equal(filt, 1.0)
    assert ll == pytest.approx(np.log(dens).sum())
    np.testing.assert_array_equal(kim_smoother(filt, [[1.0]]), 1.0)


def test_uninformative_densities_give_markov_prediction(rng):
    P = _random_P(rng, 3)
    init = np.array([1.0, 0.0, 0.0])
    filt, _ = hamilton_filter(np.full((6, 3), 0.4), P, init)
    expected = init.copy()
    for t in range(6):
        np.testing.assert_allclose(filt[t], expected, atol=1e-14)
        expected = expected @ P


def test_identity_transition_smoother_is_constant(rng):
    filt, _ = hamilton_filter(rng.uniform(0.1, 1.0, (7, 3)), np.eye(3), np.ones(3) / 3)
    sm = kim_smoother(filt, np.eye(3))
    np.testing.assert_allclose(sm, np.repeat(filt[-1:], 7, axis=0), atol=1e-13)


def test_filter_input_errors():
    with pytest.raises(ValidationError, match="row-stochastic|transition"):
        hamilton_filter(np.ones((3, 2)), [[0.5, 0.6], [0.5, 0.5]], [0.5, 0.5])
    with pytest.raises(ValidationError, match="zero density"):
        hamilton_filter(np.zeros((3, 2)), np.eye(2), [0.5, 0.5])
    with pytest.raises(ValidationError, match="regimes"):
        hamilton_filter(np.ones((3, 3)), np.eye(2), [0.5, 0.5])
    with pytest.raises(NumericalError):
        hamilton_filter([[1.0, 0.0], [0.0, 1.0]], np.eye(2), [1.0, 0.0])


def test_ergodic_simple_and_power_iteration(rng):
    np.testing.assert_allclose(ergodic_probs([[0.5, 0.5], [0.5, 0.5]]), [0.5, 0.5], atol=1e-14)
    for M in (2, 3, 4, 5):
        P = _random_P(rng, M)
        pi = ergodic_probs(P)
        np.testing.assert_allclose(np.linalg.matrix_power(P, 1000)[0], pi, atol=1e-6)
        np.testing.assert_allclose(pi @ P, pi, atol=1e-12)
    with pytest.raises(ValidationError, match="reducible"):
        ergodic_probs(np.eye(2))


def test_log_densities_match_scipy(rng):
    N = 6
    L = [rng.normal(size=(N, 1)), rng.normal(size=(N, 2))]
    psi = rng.uniform(0.2, 1.0, N)
    X = rng.normal(size=(10, N))
    got = regime_log_densities(X, L, psi)
    for j, Lj in enumerate(L):
        ref = multivariate_normal(np.zeros(N), Lj @ Lj.T + np.diag(psi)).logpdf(X)
        np.testing.assert_allclose(got[:, j], ref, atol=1e-10)


def test_em_monotone_row_stochastic_and_recovers(fitted, two_regime):
    _, truth = two_regime
    hist = np.diff(fitted.loglik_history)
    assert np.all(hist >= -1e-8)
    np.testing.assert_allclose(fitted.P.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(fitted.P >= 0)
    acc = np.mean(fitted.regimes == truth.regimes)
    assert max(acc, 1 - acc) >= 0.9
    assert fitted.factor_var[0, 0] <= fitted.factor_var[1, 0]
    np.testing.assert_allclose(fitted.ergodic @ fitted.P, fitted.ergodic, atol=1e-12)


def test_em_deterministic_and_thread_invariant(two_regime, fitted):
    panel, _ = two_regime
    again = em_fit(panel, 2, n_starts=3, seed=0)
    threaded = em_fit(panel, 2, n_starts=3, seed=0, n_jobs=3)
    for other in (again, threaded):
        assert other.loglik_history == fitted.loglik_history
        assert other.P.tobytes() == fitted.P.tobytes()
        assert other.smoothed_probs.tobytes() == fitted.smoothed_probs.tobytes()


def test_permutation_equivalence(fitted, two_regime):
    panel, truth = two_regime
    swapped = fitted.permuted([1, 0])
    _, _, ll = filter_with_model(swapped, panel.values)
    assert ll == pytest.approx(fitted.loglik, rel=1e-10)
    np.testing.assert_allclose(swapped.common_component(panel.values), fitted.common_component(panel.values), atol=1e-10)
    a = fit_ms(truth.headline, fitted)
    b = fit_ms(truth.headline, swapped)
    np.testing.assert_allclose(a.values, b.values, atol=1e-10)
    with pytest.raises(ValidationError, match="permutation"):
        fitted.permuted([0, 0])


def test_single_regime_matches_pca(rng):
    X = rng.normal(size=(100, 8)) + rng.normal(size=(100, 1))
    X = (X - X.mean(0)) / X.std(0, ddof=1)
    model = em_fit(X, 1)
    est = estimate_factors(X, 1)
    np.testing.assert_allclose(model.common_component(X), est.common_component, atol=1e-6)
    np.testing.assert_array_equal(model.smoothed_probs, 1.0)


def test_warm_start_and_serialization(fitted, two_regime):
    panel, _ = two_regime
    warm = em_fit(panel, 2, init=fitted)
    assert warm.loglik >= fitted.loglik - 1e-6 * abs(fitted.loglik)
    assert warm.n_iter <= 5
    doc = fitted.to_dict()
    assert doc["M"] == 2 and len(doc["transition"]) == 2
    frame = fitted.probabilities_frame()
    assert list(frame.columns) == ["date", "prob_regime_1", "prob_regime_2"]
    assert frame["date"].iloc[0] == str(panel.dates[0])
    np.testing.assert_allclose(frame.iloc[:, 1:].sum(axis=1), 1.0, atol=1e-12)


def test_em_input_errors(rng):
    X = rng.normal(size=(30, 4))
    with pytest.raises(ValidationError):
        em_fit(X, 0)
    with pytest.raises((ValidationError, NumericalError)):
        em_fit(X[:6], 3)


def test_estimator_api(two_regime):
    panel, _ = two_regime
    est = MarkovSwitchingFactorModel(n_regimes=2, n_starts=2).fit(panel)
    proba = est.predict_proba(panel)
    np.testing.assert_allclose(proba, est.model_.smoothed_probs, atol=1e-10)
    np.testing.assert_array_equal(est.predict(panel), est.model_.regimes)
    assert est.transform(panel).shape == (panel.n_periods, 2)
    assert est.score(panel) == pytest.approx(est.model_.loglik, rel=1e-10)
    assert est.get_params()["n_regimes"] == 2
