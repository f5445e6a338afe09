from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regimefactor import ValidationError
from regimefactor.breaks import BreakModel, StructuralBreakFactorModel, segment_factor_estimates
from regimefactor.indicator import (
    CoreInflationIndicator,
    Variant,
    block_diagonal_ols,
    fit_baseline,
    fit_ms,
    fit_sc,
    regime_variance_diagnostic,
)
from regimefactor.markov import MsModel
from regimefactor.simulate import DgpSpec, simulate_panel

from .oracles import ols


def _break_model(X, breaks, dates=None):
    segs = segment_factor_estimates(X, breaks)
    return BreakModel(list(breaks), 0.1, 3, 0.0, 0.0, 1, X.shape[0], segs, dates=dates)


def _ms_model(regimes, paths):
    T, M = paths.shape
    probs = np.eye(M)[regimes]
    return MsModel(M=M, loadings=[np.ones((2, 1))] * M, idio_var=np.ones(2), factor_var=np.ones((M, 1)),
                   P=np.full((M, M), 1.0 / M), ergodic=np.full(M, 1.0 / M), filtered_probs=probs,
                   smoothed_probs=probs, regime_factor_paths=paths, loglik=0.0)


def test_perfect_regressor(rng):
    y = rng.normal(2.0, 1.5, 80)
    z = (y - y.mean()) / y.std(ddof=1)
    ind = fit_baseline(y, z)
    np.testing.assert_allclose(ind.values, y, atol=1e-12)
    assert ind.coefficients[0, 1] == pytest.approx(y.std(ddof=1), rel=1e-12)


def test_orthogonal_factor_gives_mean(rng):
    y = rng.normal(size=50)
    Q, _ = np.linalg.qr(np.c_[np.ones(50), y - y.mean(), rng.normal(size=50)])
    ind = fit_baseline(y, Q[:, 2])
    np.testing.assert_allclose(ind.values, y.mean(), atol=1e-12)


def test_baseline_normal_equations_oracle(rng):
    f = rng.normal(size=120)
    y = 1.0 + 0.7 * f + rng.normal(size=120)
    ind = fit_baseline(y, f)
    np.testing.assert_allclose(ind.coefficients[0], ols(y, f), atol=1e-10)
    assert abs(ind.residuals.mean()) < 1e-8
    assert abs(ind.residuals @ f) < 1e-8
    with pytest.raises(ValidationError, match="constant"):
        fit_baseline(y, np.ones(120))
    with pytest.raises(ValidationError, match="observations"):
        fit_baseline(y[:10], f)


def test_sign_invariance(rng):
    f = rng.normal(size=60)
    y = f + rng.normal(size=60)
    a, b = fit_baseline(y, f), fit_baseline(y, -f)
    np.testing.assert_allclose(a.values, b.values, atol=1e-12)
    assert a.coefficients[0, 1] == pytest.approx(-b.coefficients[0, 1])


def test_sc_one_segment_equals_baseline(rng):
    X = rng.normal(size=(50, 6)) + rng.normal(size=(50, 1))
    y = rng.normal(size=50)
    bm = _break_model(X, [])
    sc = fit_sc(y, bm)
    base = fit_baseline(y, bm.segment_factors[0].factors[:, 0])
    np.testing.assert_allclose(sc.values, base.values, atol=1e-10)
    np.testing.assert_allclose(sc.coefficients, base.coefficients, atol=1e-10)


def test_sc_two_segments_block_diagonal_equivalence(rng):
    X = rng.normal(size=(90, 6)) + rng.normal(size=(90, 1))
    y = rng.normal(size=90)
    bm = _break_model(X, [40])
    sc = fit_sc(y, bm)
    factors = [fe.factors[:, 0] for fe in bm.segment_factors]
    np.testing.assert_allclose(block_diagonal_ols(y, factors), sc.coefficients, atol=1e-10)
    for k, (lo, hi) in enumerate(bm.bounds):
        np.testing.assert_allclose(sc.coefficients[k], ols(y[lo:hi], factors[k]), atol=1e-10)
        r = sc.residuals[lo:hi]
        assert abs(r.mean()) < 1e-8 and abs(r @ factors[k]) < 1e-8
    assert sc.variant is Variant.SC


def test_sc_rejects_short_segment(rng):
    X = rng.normal(size=(30, 4))
    segs = segment_factor_estimates(X, [28])
    bm = BreakModel([28], 0.05, 2, 0.0, 0.0, 1, 30, segs)
    with pytest.raises(ValidationError, match="fewer than 3"):
        fit_sc(rng.normal(size=30), bm)
    with pytest.raises(ValidationError, match="segment factor"):
        fit_sc(rng.normal(size=30), BreakModel([], 0.1, 3, 0.0, 0.0, 1, 30))


def test_sc_vintage_freeze(rng):
    X = rng.normal(size=(100, 5)) + rng.normal(size=(100, 1))
    y = rng.normal(size=100)
    early = fit_sc(y[:80], _break_model(X[:80], [40]))
    late = fit_sc(y, _break_model(X, [40]))
    assert early.values[:40].tobytes() == late.values[:40].tobytes()
    assert not np.allclose(early.values[40:80], late.values[40:80])


def test_ms_single_regime_equals_baseline(rng):
    f = rng.normal(size=70)
    y = 0.5 + f + rng.normal(size=70)
    ms = fit_ms(y, _ms_model(np.zeros(70, dtype=int), f[:, None]))
    np.testing.assert_allclose(ms.values, fit_baseline(y, f).values, atol=1e-10)


def test_ms_fallback_and_weighted(rng):
    T = 60
    regimes = np.zeros(T, dtype=int)
    regimes[:2] = 1
    paths = rng.normal(size=(T, 2))
    y = rng.normal(size=T)
    ms = fit_ms(y, _ms_model(regimes, paths))
    assert ms.fallback.tolist() == [False, True]
    f = paths[np.arange(T), regimes]
    np.testing.assert_allclose(ms.coefficients[1], ols(y, f), atol=1e-10)
    assert ms.to_dict()["coefficients"][1]["pooled_fallback"] is True
    regimes = np.repeat([0, 1], 30)
    w = fit_ms(y, _ms_model(regimes, paths), weighted=True)
    plain = fit_ms(y, _ms_model(regimes, paths))
    np.testing.assert_allclose(w.values, plain.values, atol=1e-10)


def test_ms_coefficient_recovery_within_two_se():
    hits = total = 0
    alpha, beta = np.array([1.0, 4.0]), np.array([0.5, 2.0])
    for seed in range(50):
        rng = np.random.default_rng(seed)
        regimes = np.repeat([0, 1, 0, 1], 50)
        f = rng.normal(size=200)
        y = alpha[regimes] + beta[regimes] * f + rng.normal(size=200)
        ind = fit_ms(y, _ms_model(regimes, np.c_[f, f]))
        truth = np.c_[alpha, beta]
        hits += int(np.sum(np.abs(ind.coefficients - truth) <= 2 * ind.std_errors))
        total += truth.size
    assert hits / total >= 0.9


def test_indicator_frame_and_dict(rng):
    f = rng.normal(size=24)
    dates = pd.period_range("2010-01", periods=24, freq="M")
    ind = fit_baseline(f + rng.normal(size=24), f, dates=dates, vintage="2011-12")
    frame = ind.to_frame()
    assert list(frame.columns) == ["date", "headline", "indicator", "regime", "alpha", "beta"]
    assert frame["date"].iloc[0] == "2010-01" and set(frame["regime"]) == {1}
    np.testing.assert_allclose(frame["alpha"] + frame["beta"] * f, ind.values)
    assert ind.to_dict()["vintage"] == "2011-12"


def test_variance_diagnostic_size_and_power():
    labels = np.repeat([0, 1], 100)
    size = power = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        f = rng.normal(size=200)
        size += regime_variance_diagnostic(factor=f, labels=labels)["p_value"].iloc[0] < 0.05
        f[100:] *= 2.0
        power += regime_variance_diagnostic(factor=f, labels=labels)["p_value"].iloc[0] < 0.05
    assert size <= 20
    assert power >= 190
    assert regime_variance_diagnostic(factor=np.ones(5), labels=np.zeros(5)).empty


def test_variance_diagnostic_accepts_models(rng):
    X = rng.normal(size=(120, 6)) * np.repeat([1.0, 3.0], 60)[:, None]
    bm = StructuralBreakFactorModel(n_breaks=1, epsilon=0.1).fit(X).break_model_
    table = regime_variance_diagnostic(bm)
    assert len(table) == 1 and table.loc[0, "regime_a"] == 1
    with pytest.raises(ValidationError):
        regime_variance_diagnostic("nope")


@pytest.mark.parametrize("variant", ["baseline", "sc", "ms"])
def test_core_inflation_indicator(variant):
    spec = DgpSpec(n_series=12, n_periods=200, break_dates=[100], factor_var=[1.0, 4.0], loading_flip=0.5)
    panel, truth = simulate_panel(spec, seed=5)
    est = CoreInflationIndicator(variant=variant, n_breaks=1, n_starts=2).fit(panel, truth.headline)
    pred = est.predict(panel)
    np.testing.assert_allclose(pred, est.indicator_.values, atol=1e-8)
    assert est.score(panel, truth.headline.values) > 0.0


def test_core_inflation_indicator_unknown_variant(rng):
    with pytest.raises(ValidationError, match="variant"):
        CoreInflationIndicator(variant="other").fit(rng.normal(size=(30, 4)), rng.normal(size=30))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_stored_values_match_coefficients(seed, K):
    rng = np.random.default_rng(seed)
    T = 15 * K
    X = rng.normal(size=(T, 4)) + rng.normal(size=(T, 1))
    bm = _break_model(X, [15 * k for k in range(1, K)])
    ind = fit_sc(rng.normal(size=T), bm)
    expected = ind.coefficients[ind.regimes, 0] + ind.coefficients[ind.regimes, 1] * ind.factor
    assert ind.values.tobytes() == expected.tobytes()
