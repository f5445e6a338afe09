from __future__ import annotations

import numpy as np
import pytest

from regimefactor import ValidationError
from regimefactor.simulate import DgpSpec, simulate_panel


def test_break_dgp_is_bit_identical():
    spec = DgpSpec(n_series=10, n_periods=120, break_dates=[60], loading_flip=1.0)
    a, ta = simulate_panel(spec, seed=7)
    b, tb = simulate_panel(spec, seed=7)
    assert a.values.tobytes() == b.values.tobytes()
    assert ta.headline.values.tobytes() == tb.headline.values.tobytes()
    np.testing.assert_array_equal(ta.regimes[:60], 0)
    np.testing.assert_array_equal(ta.regimes[60:], 1)
    np.testing.assert_array_equal(ta.loadings[1], -ta.loadings[0])
    c, _ = simulate_panel(spec, seed=8)
    assert not np.array_equal(a.values, c.values)


def test_markov_occupancy():
    spec = DgpSpec(n_series=3, n_periods=2000, transition=[[0.95, 0.05], [0.05, 0.95]])
    _, truth = simulate_panel(spec, seed=1)
    assert abs(np.mean(truth.regimes == 0) - 0.5) <= 0.10
    assert truth.break_dates == (np.flatnonzero(np.diff(truth.regimes)) + 1).tolist()


def test_noiseless_rank_one_columns_proportional_to_loadings():
    spec = DgpSpec(n_series=6, n_periods=50, noise_scale=0.0, standardize=False)
    panel, truth = simulate_panel(spec, seed=2)
    expected = np.outer(truth.factors[:, 0], truth.loadings[0, :, 0])
    np.testing.assert_allclose(panel.values, expected, rtol=1e-14, atol=1e-14)


def test_headline_follows_regime_coefficients():
    spec = DgpSpec(n_series=4, n_periods=300, break_dates=[150],
                   headline={"alpha": [1.0, 5.0], "beta": [0.5, 2.0], "noise_scale": 0.0})
    _, truth = simulate_panel(spec, seed=3)
    g = truth.factors[:, 0]
    np.testing.assert_allclose(truth.headline.values[:150], 1.0 + 0.5 * g[:150])
    np.testing.assert_allclose(truth.headline.values[150:], 5.0 + 2.0 * g[150:])


@pytest.mark.parametrize("kwargs, match", [
    ({"break_dates": [5], "transition": [[1.0]]}, "either"),
    ({"break_dates": [0]}, "break dates"),
    ({"break_dates": [10, 5]}, "increasing"),
    ({"transition": [[0.5, 0.4], [0.5, 0.5]]}, "row-stochastic"),
    ({"factor_var": [1.0, 2.0]}, "factor_var"),
    ({"loading_flip": 2.0}, "loading_flip"),
    ({"factor_ar": 1.0}, "factor_ar"),
    ({"headline": {"gamma": 1}}, "unknown headline"),
])
def test_spec_validation(kwargs, match):
    with pytest.raises(ValidationError, match=match):
        simulate_panel(DgpSpec(n_periods=20, **kwargs), seed=0)


def test_from_dict_rejects_unknown_keys(tmp_path):
    with pytest.raises(ValidationError, match="unknown DGP keys"):
        DgpSpec.from_dict({"n_series": 3, "bogus": 1})
    spec = DgpSpec(n_series=3, break_dates=[50])
    assert DgpSpec.from_dict(spec.to_dict()) == spec
