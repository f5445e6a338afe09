"""Regime-switching factor models for core inflation."""

from __future__ import annotations

__version__ = "0.1.0"

from .breaks import (
    BreakModel,
    StructuralBreakFactorModel,
    decide_num_breaks,
    dp_break_search,
    hac_long_run_cov,
    sequential_test,
    ssne,
    sup_f_test,
    udmax_wdmax,
    vech_moments,
)
from .evaluate import (
    SAMPLE_PRESETS,
    ModelSpec,
    VintageRun,
    mcs,
    revision_stats,
    rmsfe,
    run_vintages,
    vintage_fan,
)
from .exceptions import NumericalError, ValidationError
from .factors import FactorEstimate, FactorPCA, estimate_factors, ic_num_factors, project_factor
from .indicator import (
    CoreInflationIndicator,
    IndicatorSeries,
    fit_baseline,
    fit_ms,
    fit_sc,
    regime_variance_diagnostic,
)
from .markov import MarkovSwitchingFactorModel, MsModel, em_fit, ergodic_probs, hamilton_filter, kim_smoother
from .panel import InflationSeries, PricePanel, Transform, ingest_csv, standardize, to_mom, to_yoy
from .simulate import DgpSpec, GroundTruth, simulate_panel

__all__ = [
    "BreakModel",
    "CoreInflationIndicator",
    "DgpSpec",
    "FactorEstimate",
    "FactorPCA",
    "GroundTruth",
    "IndicatorSeries",
    "InflationSeries",
    "MarkovSwitchingFactorModel",
    "ModelSpec",
    "MsModel",
    "NumericalError",
    "PricePanel",
    "SAMPLE_PRESETS",
    "StructuralBreakFactorModel",
    "Transform",
    "ValidationError",
    "VintageRun",
    "decide_num_breaks",
    "dp_break_search",
    "em_fit",
    "ergodic_probs",
    "estimate_factors",
    "fit_baseline",
    "fit_ms",
    "fit_sc",
    "hac_long_run_cov",
    "hamilton_filter",
    "ic_num_factors",
    "ingest_csv",
    "kim_smoother",
    "mcs",
    "project_factor",
    "regime_variance_diagnostic",
    "revision_stats",
    "rmsfe",
    "run_vintages",
    "sequential_test",
    "simulate_panel",
    "ssne",
    "standardize",
    "sup_f_test",
    "to_mom",
    "to_yoy",
    "udmax_wdmax",
    "vech_moments",
    "vintage_fan",
]
