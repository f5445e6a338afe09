"""Synthetic regime-switching factor panels with known ground truth."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import pandas as pd

from .exceptions import ValidationError
from .panel import InflationSeries, PricePanel, Transform

__all__ = ["DgpSpec", "GroundTruth", "simulate_panel"]


@dataclass
class DgpSpec:
    """Data-generating process for :func:`simulate_panel`.

    Regimes come either from ``break_dates`` (1-based index of the last
    observation of each regime but the final one) or from a row-stochastic
    ``transition`` matrix; with neither there is a single regime. Headline
    inflation is ``alpha_j + beta_j g_t + noise`` with ``g_t`` the unit-variance
    factor; ``headline`` may override the defaults ``alpha = 2``, ``beta = 1``
    and ``noise_scale = 0.5``.
    """

    n_series: int = 20
    n_periods: int = 200
    n_factors: int = 1
    break_dates: list[int] | None = None
    transition: list[list[float]] | None = None
    loadings: list | None = None
    loading_flip: float = 0.0
    factor_var: list[float] | None = None
    factor_ar: float = 0.0
    noise_scale: float = 0.5
    headline: dict | None = None
    standardize: bool = True
    start: str = "2000-01"

    @classmethod
    def from_dict(cls, doc: dict) -> DgpSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown DGP keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> DgpSpec:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def n_regimes(self) -> int:
        if self.break_dates is not None:
            return len(self.break_dates) + 1
        if self.transition is not None:
            return len(self.transition)
        return 1

    def validate(self) -> None:
        if self.n_series < 1 or self.n_periods < 2 or self.n_factors < 1:
            raise ValidationError("n_series, n_factors must be >= 1 and n_periods >= 2")
        if self.break_dates is not None and self.transition is not None:
            raise ValidationError("give either break_dates or transition, not both")
        if self.break_dates is not None:
            b = list(self.break_dates)
            if any(not (1 <= k < self.n_periods) for k in b):
                raise ValidationError(f"break dates must lie in [1, {self.n_periods - 1}], got {b}")
            if any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
                raise ValidationError("break dates must be strictly increasing")
        if self.transition is not None:
            P = np.asarray(self.transition, dtype=float)
            if P.ndim != 2 or P.shape[0] != P.shape[1]:
                raise ValidationError("transition must be square")
            if np.any(P < 0) or np.any(P > 1) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-10):
                raise ValidationError("transition matrix must be row-stochastic")
        M = self.n_regimes
        if self.factor_var is not None and (len(self.factor_var) != M or min(self.factor_var) <= 0):
            raise ValidationError(f"factor_var needs {M} positive entries")
        if self.loadings is not None:
            L = np.asarray(self.loadings, dtype=float)
            if L.shape != (M, self.n_series, self.n_factors):
                raise ValidationError(f"loadings must have shape {(M, self.n_series, self.n_factors)}")
        if not 0.0 <= self.loading_flip <= 1.0:
            raise ValidationError("loading_flip must be in [0, 1]")
        if not -1.0 < self.factor_ar < 1.0:
            raise ValidationError("factor_ar must lie strictly inside (-1, 1)")
        if self.noise_scale < 0:
            raise ValidationError("noise_scale must be non-negative")
        if self.headline is not None:
            unknown = set(self.headline) - {"alpha", "beta", "noise_scale"}
            if unknown:
                raise ValidationError(f"unknown headline keys: {sorted(unknown)}")
            for key in ("alpha", "beta"):
                if key in self.headline and len(self.headline[key]) != M:
                    raise ValidationError(f"headline.{key} needs {M} entries")


@dataclass
class GroundTruth:
    factors: np.ndarray
    regimes: np.ndarray
    break_dates: list[int]
    loadings: np.ndarray
    noise: np.ndarray
    raw: np.ndarray
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    headline: InflationSeries | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "factors": self.factors.tolist(),
            "regimes": self.regimes.tolist(),
            "break_dates": list(self.break_dates),
            "loadings": self.loadings.tolist(),
        }


def _stationary(P: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eig(P.T)
    k = int(np.argmin(np.abs(w - 1.0)))
    pi = np.real(v[:, k])
    return pi / pi.sum()


def simulate_panel(spec: DgpSpec, seed: int) -> tuple[PricePanel, GroundTruth]:
    """Draw a panel from ``spec``; identical ``seed`` gives bit-identical output."""
    spec.validate()
    rng = np.random.default_rng(seed)
    T, N, r, M = spec.n_periods, spec.n_series, spec.n_factors, spec.n_regimes

    if spec.transition is not None:
        P = np.asarray(spec.transition, dtype=float)
        cum = np.cumsum(P, axis=1)
        u = rng.random(T)
        regimes = np.empty(T, dtype=int)
        regimes[0] = int(np.searchsorted(np.cumsum(_stationary(P)), u[0] * (1 - 1e-12)))
        for t in range(1, T):
            regimes[t] = int(np.searchsorted(cum[regimes[t - 1]], u[t] * (1 - 1e-12)))
        changes = np.flatnonzero(np.diff(regimes)) + 1
        break_dates = changes.tolist()
    else:
        break_dates = list(spec.break_dates or [])
        regimes = np.zeros(T, dtype=int)
        for k, b in enumerate(break_dates):
            regimes[b:] = k + 1

    if spec.loadings is not None:
        loadings = np.asarray(spec.loadings, dtype=float)
    else:
        base = rng.uniform(0.5, 1.5, size=(N, r))
        n_flip = int(math.ceil(spec.loading_flip * N))
        loadings = np.repeat(base[None], M, axis=0)
        if n_flip:
            loadings[1::2, N - n_flip:, :] *= -1.0

    var = np.asarray(spec.factor_var if spec.factor_var is not None else [1.0] * M, dtype=float)
    shocks = rng.standard_normal((T, r))
    g = np.empty((T, r))
    g[0] = shocks[0]
    scale = math.sqrt(1.0 - spec.factor_ar**2)
    for t in range(1, T):
        g[t] = spec.factor_ar * g[t - 1] + scale * shocks[t]
    factors = g * np.sqrt(var[regimes])[:, None]

    noise = spec.noise_scale * rng.standard_normal((T, N))
    common = np.einsum("tnr,tr->tn", loadings[regimes], factors)
    raw = common + noise

    dates = pd.period_range(spec.start, periods=T, freq="M")
    ids = tuple(f"s{i:03d}" for i in range(N))
    mean = std = None
    if spec.standardize:
        mean = raw.mean(axis=0)
        std = raw.std(axis=0, ddof=1)
        if np.any(std <= 0):
            raise ValidationError("degenerate DGP: a simulated series has zero variance")
        stats = pd.DataFrame({"mean": mean, "std": std}, index=list(ids))
        panel = PricePanel(dates, ids, (raw - mean) / std, Transform.STANDARDIZED, stats)
    else:
        panel = PricePanel(dates, ids, raw, Transform.YOY)

    hspec = spec.headline or {}
    a = np.broadcast_to(np.asarray(hspec.get("alpha", 2.0), dtype=float), (spec.n_regimes,))
    b = np.broadcast_to(np.asarray(hspec.get("beta", 1.0), dtype=float), (spec.n_regimes,))
    eps = float(hspec.get("noise_scale", 0.5)) * rng.standard_normal(T)
    f1 = factors[:, 0] / np.sqrt(var[regimes])
    headline = InflationSeries(dates, a[regimes] + b[regimes] * f1 + eps, "Headline")

    truth = GroundTruth(factors, regimes, break_dates, loadings, noise, raw, mean, std, headline)
    return panel, truth
