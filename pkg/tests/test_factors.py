from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regimefactor import ValidationError
from regimefactor.factors import FactorPCA, estimate_factors, ic_num_factors, project_factor

from .conftest import standardized


def _power_iteration(S, n_iter=5000):
    v = np.ones(S.shape[0]) / np.sqrt(S.shape[0])
    for _ in range(n_iter):
        w = S @ v
        v = w / np.linalg.norm(w)
    return float(v @ S @ v), v


def test_noiseless_rank_one_recovers_factor(rng):
    f = rng.normal(size=80)
    lam = rng.uniform(0.5, 1.5, 15)
    est = estimate_factors(np.outer(f, lam), 1)
    assert abs(np.corrcoef(est.factors[:, 0], f)[0, 1]) >= 1 - 1e-10


@pytest.mark.parametrize("shape", [(120, 20), (15, 40)])
def test_normalization_and_power_iteration_oracle(rng, shape):
    X = standardized(rng.normal(size=shape) + rng.normal(size=(shape[0], 1)))
    T, N = shape
    est = estimate_factors(X, 2)
    np.testing.assert_allclose(est.factors.T @ est.factors / T, np.eye(2), atol=1e-10)
    np.testing.assert_allclose(est.loadings, X.T @ est.factors / T, atol=1e-10)
    assert np.all(est.loadings.sum(axis=0) >= 0)
    S = X.T @ X / T
    lam1, v = _power_iteration(S)
    assert est.eigenvalues[0] == pytest.approx(lam1, rel=1e-10)
    total = np.trace(S)
    r1 = estimate_factors(X, 1)
    assert r1.explained_share == pytest.approx(lam1 / total, rel=1e-10)
    assert abs(abs(r1.loadings[:, 0] @ v) / np.linalg.norm(r1.loadings[:, 0]) - 1) < 1e-8


def test_rank_and_input_validation(rng):
    with pytest.raises(ValidationError, match="r="):
        estimate_factors(rng.normal(size=(10, 3)), 4)
    with pytest.raises(ValidationError, match="numerical rank"):
        estimate_factors(np.outer(rng.normal(size=30), rng.normal(size=5)), 2)
    X = rng.normal(size=(10, 3))
    X[2, 1] = np.nan
    with pytest.raises(ValidationError):
        estimate_factors(X)


def test_ic_noiseless_two_factor(rng):
    F = rng.normal(size=(200, 2))
    X = standardized(F @ rng.normal(size=(2, 30)))
    assert ic_num_factors(X, 6) == 2
    assert ic_num_factors(X, 6, "ICp1") == 2


def test_ic_white_noise_and_strong_single_factor(rng):
    assert ic_num_factors(rng.normal(size=(200, 30)), 6) == 1
    f = rng.normal(size=(300, 1))
    X = standardized(f @ rng.uniform(0.5, 1.5, (1, 40)) * 10 + rng.normal(size=(300, 40)))
    assert ic_num_factors(X, 6) == 1


def test_ic_validation(rng):
    X = rng.normal(size=(40, 10))
    with pytest.raises(ValidationError, match="r_max"):
        ic_num_factors(X, 6)
    with pytest.raises(ValidationError, match="criterion"):
        ic_num_factors(X, 2, "AIC")


def test_project_factor(rng):
    L = rng.normal(size=(12, 2))
    g = rng.normal(size=2)
    np.testing.assert_allclose(project_factor(L, L @ g), g, atol=1e-12)
    q, _ = np.linalg.qr(np.c_[L, rng.normal(size=(12, 1))])
    np.testing.assert_allclose(project_factor(L, q[:, 2]), 0.0, atol=1e-12)
    x = rng.normal(size=(5, 12))
    oracle = np.linalg.solve(L.T @ L, L.T @ x.T).T
    np.testing.assert_allclose(project_factor(L, x), oracle, atol=1e-10)
    with pytest.raises(ValidationError, match="rank deficient"):
        project_factor(np.c_[L[:, 0], L[:, 0]], x)


def test_factor_pca_estimator(rng):
    X = standardized(rng.normal(size=(60, 8)) + rng.normal(size=(60, 1)))
    model = FactorPCA(n_factors=2).fit(X)
    np.testing.assert_allclose(model.transform(X), model.factors_, atol=1e-10)
    assert model.inverse_transform(model.factors_).shape == X.shape
    assert model.get_params() == {"n_factors": 2}


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 40), st.integers(2, 10), st.integers(0, 10_000))
def test_sign_convention_and_normalization_property(T, N, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(T, N))
    est = estimate_factors(X, 1)
    assert est.loadings.sum() >= 0
    np.testing.assert_allclose(est.factors.T @ est.factors / T, 1.0, atol=1e-8)
    flipped = estimate_factors(-X, 1)
    np.testing.assert_allclose(flipped.common_component, -est.common_component, atol=1e-8)
