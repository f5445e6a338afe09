"""Real-time evaluation: expanding-window vintages, revisions, forecast errors and the MCS."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ._validation import as_matrix
from .breaks import StructuralBreakFactorModel
from .exceptions import NumericalError, ValidationError
from .factors import estimate_factors
from .indicator import IndicatorSeries, fit_baseline, fit_ms, fit_sc
from .markov import MsModel, em_fit
from .panel import InflationSeries, PricePanel, Transform, _as_period, standardize

logger = logging.getLogger(__name__)

__all__ = [
    "SAMPLE_PRESETS",
    "ModelSpec",
    "VintageRun",
    "MCSResult",
    "fit_indicator",
    "run_vintages",
    "revision_stats",
    "vintage_revision",
    "rmsfe",
    "loss_panel",
    "mcs",
    "vintage_fan",
    "evaluation_report",
]

SAMPLE_PRESETS: dict[str, tuple[str, str]] = {
    "pre-covid": ("1990-01", "2019-12"),
    "rising-inflation": ("2020-01", "2022-12"),
    "inflation-normalization": ("2023-01", "2023-12"),
    "post-covid": ("2020-01", "2023-12"),
    "full": ("1990-01", "2023-12"),
}


@dataclass(frozen=True)
class ModelSpec:
    """How one indicator is estimated on a vintage.

    ``kind`` is ``"baseline"``, ``"sc"`` or ``"ms"``. Model identifiers
    ``"M1"``..``"M9"`` map to Markov-switching fits with that many regimes
    (``M1`` is the static principal-components indicator) and ``"SC"`` to the
    structural-change indicator.
    """

    kind: str = "ms"
    n_regimes: int = 1
    n_factors: int = 1
    epsilon: float = 0.15
    max_breaks: int = 5
    alpha: float = 0.05
    n_breaks: int | None = None
    n_starts: int = 10
    max_iter: int = 500
    tol: float = 1e-6
    seed: int = 0
    warm_start: bool = True

    @classmethod
    def from_id(cls, model_id: str, **overrides) -> ModelSpec:
        mid = model_id.upper()
        if mid == "SC":
            return cls(kind="sc", **overrides)
        if mid.startswith("M") and mid[1:].isdigit() and int(mid[1:]) >= 1:
            return cls(kind="ms", n_regimes=int(mid[1:]), **overrides)
        raise ValidationError(f"unknown model id {model_id!r}; expected M<k> or SC")

    @property
    def model_id(self) -> str:
        if self.kind == "sc":
            return "SC"
        if self.kind == "baseline":
            return "M1"
        return f"M{self.n_regimes}"

    def min_periods(self) -> int:
        if self.kind == "ms" and self.n_regimes > 1:
            return max(24, self.n_regimes * (self.n_factors + 2))
        return 24


def fit_indicator(panel: PricePanel, headline: InflationSeries, spec: ModelSpec,
                  init: MsModel | None = None) -> tuple[IndicatorSeries, MsModel | None]:
    """Standardize ``panel`` on its own sample and fit one indicator.

    Returns the indicator and, for Markov-switching fits, the fitted model
    (usable as a warm start for the next vintage).
    """
    std = standardize(panel)
    vintage = str(std.dates[-1])
    if std.n_periods < spec.min_periods():
        raise ValidationError(f"vintage {vintage} has {std.n_periods} periods; {spec.model_id} needs {spec.min_periods()}")
    if spec.kind == "baseline":
        est = estimate_factors(std.values, spec.n_factors)
        return fit_baseline(headline, est.factors[:, 0], std.dates, vintage=vintage), None
    if spec.kind == "sc":
        sb = StructuralBreakFactorModel(spec.n_factors, epsilon=spec.epsilon, max_breaks=spec.max_breaks,
                                        alpha=spec.alpha, n_breaks=spec.n_breaks).fit(std)
        return fit_sc(headline, sb.break_model_, vintage=vintage), None
    if spec.kind == "ms":
        model = em_fit(std, spec.n_regimes, spec.n_factors, spec.max_iter, spec.tol, spec.n_starts,
                       spec.seed, init=init)
        return fit_ms(headline, model, vintage=vintage), model
    raise ValidationError(f"unknown model kind {spec.kind!r}")


@dataclass
class VintageRun:
    """Indicator series re-estimated on an expanding window.

    ``vintages`` maps each vintage date (``YYYY-MM``) to the series estimated
    with data through that date; failed vintages are absent from it and listed
    in ``failures`` with the reason.
    """

    model_id: str
    rate: str
    vintages: dict[str, IndicatorSeries]
    failures: dict[str, str] = field(default_factory=dict)
    fullinfo_paths: dict[str, IndicatorSeries] = field(default_factory=dict)
    panel: PricePanel | None = field(default=None, repr=False)
    headline: InflationSeries | None = field(default=None, repr=False)
    spec: ModelSpec | None = field(default=None, repr=False)

    @property
    def realtime_path(self) -> pd.Series:
        """Last value of each vintage's series, indexed by the vintage date."""
        idx = pd.PeriodIndex(list(self.vintages), freq="M")
        vals = [s.values[-1] for s in self.vintages.values()]
        return pd.Series(vals, index=idx, name=self.model_id)

    def series(self, vintage) -> pd.Series:
        s = self.vintages[str(_as_period(vintage))]
        return pd.Series(s.values, index=s.dates, name=str(vintage))

    def fullinfo(self, end) -> pd.Series:
        """Indicator estimated on all data through ``end`` (computed once, then cached)."""
        key = str(_as_period(end))
        if key not in self.fullinfo_paths:
            if key in self.vintages:
                self.fullinfo_paths[key] = self.vintages[key]
            elif self.panel is None:
                raise ValidationError(f"no full-information path for {key} and no panel to compute it")
            else:
                self.fullinfo_paths[key] = fit_indicator(self.panel.slice(end=key), self.headline, self.spec)[0]
        s = self.fullinfo_paths[key]
        return pd.Series(s.values, index=s.dates, name=key)


def run_vintages(panel: PricePanel, headline: InflationSeries, model_spec: ModelSpec | str,
                 start_vintage, end_vintage=None, n_jobs: int = 1) -> VintageRun:
    """Re-standardize and re-fit on every expanding window ending in ``[start, end]``.

    Markov-switching runs with ``warm_start`` proceed sequentially, each
    vintage starting EM from the previous fit (a cold multi-start fit is used
    for the first vintage and after any failure). Other runs may use
    ``n_jobs`` threads; results are assembled in vintage order either way.
    """
    spec = ModelSpec.from_id(model_spec) if isinstance(model_spec, str) else model_spec
    if panel.transform is Transform.RAW_INDEX:
        raise ValidationError("vintage runs need an inflation-rate panel, not raw index levels")
    start = _as_period(start_vintage)
    end = _as_period(end_vintage) if end_vintage is not None else panel.dates[-1]
    dates = [d for d in panel.dates if start <= d <= end]
    if not dates:
        raise ValidationError(f"no vintages between {start} and {end}")
    rate = panel.transform.value

    def one(v, init=None):
        try:
            return fit_indicator(panel.slice(end=v), headline, spec, init=init)
        except (ValidationError, NumericalError, np.linalg.LinAlgError) as exc:
            return str(exc)

    results: dict[str, object] = {}
    if spec.kind == "ms" and spec.n_regimes > 1 and spec.warm_start:
        prev = None
        for v in dates:
            out = one(v, prev)
            if isinstance(out, str) and prev is not None:
                out = one(v)
            results[str(v)] = out
            prev = out[1] if not isinstance(out, str) else None
    elif n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            for v, out in zip(dates, pool.map(one, dates)):
                results[str(v)] = out
    else:
        for v in dates:
            results[str(v)] = one(v)

    vintages, failures = {}, {}
    for v, out in results.items():
        if isinstance(out, str):
            failures[v] = out
            logger.info("vintage %s failed: %s", v, out)
        else:
            vintages[v] = out[0]
    return VintageRun(spec.model_id, rate, vintages, failures, {}, panel, headline, spec)


def _window(series: pd.Series, sample) -> pd.Series:
    lo, hi = (_as_period(s) for s in sample)
    return series[(series.index >= lo) & (series.index <= hi)]


def revision_stats(run: VintageRun, sample, metric: str = "RMSD", rate: str | None = None) -> float:
    """Real-time versus full-information discrepancy over ``sample``.

    ``sample`` is a ``(start, end)`` pair or a key of :data:`SAMPLE_PRESETS`.
    The full-information path uses data through the sample end. ``RMSD`` is
    the root mean squared difference and ``MAD`` the mean absolute difference.
    """
    if rate is not None and rate != run.rate:
        raise ValidationError(f"run is at rate {run.rate}, not {rate}")
    if isinstance(sample, str):
        sample = SAMPLE_PRESETS[sample]
    rt = _window(run.realtime_path, sample)
    fi = run.fullinfo(sample[1])
    common = rt.index.intersection(fi.index)
    if common.empty:
        raise ValidationError(f"no overlap between real-time and full-information paths on {sample}")
    diff = rt.reindex(common).to_numpy() - fi.reindex(common).to_numpy()
    metric = metric.upper()
    if metric == "RMSD":
        return float(np.sqrt(np.mean(diff**2)))
    if metric == "MAD":
        return float(np.mean(np.abs(diff)))
    raise ValidationError(f"unknown metric {metric!r}")


def vintage_revision(run: VintageRun, date, from_vintage, to_vintage) -> float:
    """Change in the estimate for ``date`` between two vintages."""
    d = _as_period(date)
    a, b = run.series(from_vintage), run.series(to_vintage)
    if d not in a.index or d not in b.index:
        raise ValidationError(f"{d} is not estimated in both vintages")
    return float(b[d] - a[d])


def _forecast_pairs(run: VintageRun, headline: InflationSeries, h: int, window) -> tuple[np.ndarray, np.ndarray]:
    if h < 0:
        raise ValidationError("horizon must be non-negative")
    rt = run.realtime_path
    hs = headline.to_series()
    lo, hi = (_as_period(s) for s in window)
    targets = [t for t in hs.index if lo <= t <= hi]
    if not targets or targets[-1] != hi:
        raise ValidationError(f"headline data do not reach the window end {hi}")
    origins = [t - h for t in targets]
    missing = [o for o in origins if o not in rt.index]
    if missing:
        raise ValidationError(f"real-time path lacks {len(missing)} forecast origins, first {missing[0]}")
    return rt.reindex(pd.PeriodIndex(origins)).to_numpy(), hs.reindex(pd.PeriodIndex(targets)).to_numpy()


def rmsfe(run: VintageRun, headline: InflationSeries, h: int, window) -> float:
    """Root mean squared error of the real-time indicator at ``t`` as a forecast of headline at ``t + h``.

    ``window`` bounds the target dates ``t + h``.
    """
    f, y = _forecast_pairs(run, headline, h, window)
    return float(np.sqrt(np.mean((f - y) ** 2)))


def loss_panel(runs: dict[str, VintageRun], headline: InflationSeries, h: int, window) -> pd.DataFrame:
    """Squared forecast errors, one column per model, indexed by target date."""
    cols = {}
    index = None
    for mid, run in runs.items():
        f, y = _forecast_pairs(run, headline, h, window)
        cols[mid] = (f - y) ** 2
        if index is None:
            lo, hi = (_as_period(s) for s in window)
            index = pd.PeriodIndex([t for t in headline.dates if lo <= t <= hi])
    return pd.DataFrame(cols, index=index)


@dataclass(frozen=True)
class MCSResult:
    survivors: list[str]
    pvalues: pd.Series
    elimination_order: list[str]
    statistic: str
    alpha: float

    def to_dict(self) -> dict:
        return {
            "survivors": self.survivors,
            "pvalues": {k: float(v) for k, v in self.pvalues.items()},
            "elimination_order": self.elimination_order,
            "statistic": self.statistic,
            "alpha": self.alpha,
        }


def _block_bootstrap_indices(T: int, block_len: int, n_boot: int, rng: np.random.Generator) -> np.ndarray:
    n_blocks = math.ceil(T / block_len)
    starts = rng.integers(0, T - block_len + 1, size=(n_boot, n_blocks))
    idx = (starts[:, :, None] + np.arange(block_len)[None, None, :]).reshape(n_boot, -1)
    return idx[:, :T]


def _safe_ratio(num: np.ndarray, sd: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / sd
    return np.where(sd > 0, out, np.where(num > 0, np.inf, np.where(num < 0, -np.inf, 0.0)))


def mcs(losses, alpha: float = 0.25, statistic: str = "Tmax", block_len: int | None = None,
        n_boot: int = 5000, seed: int = 0) -> MCSResult:
    """Model Confidence Set by sequential elimination.

    ``Tmax`` studentizes each model's mean loss relative to the average of
    the surviving models; ``TR`` uses the largest studentized pairwise
    differential. Variances and null distributions come from one set of
    moving-block bootstrap resamples shared by every elimination step. The
    elimination runs to a single model so every model gets a p-value; the
    p-values are cumulative maxima along the elimination path and the
    surviving set is ``{p >= alpha}``.
    """
    if isinstance(losses, pd.DataFrame):
        names = [str(c) for c in losses.columns]
        L = as_matrix(losses.to_numpy(), "losses")
    else:
        L = as_matrix(losses, "losses")
        names = [f"model_{k + 1}" for k in range(L.shape[1])]
    T, K = L.shape
    if K < 2:
        raise ValidationError("MCS needs at least two models")
    if T < 20:
        raise ValidationError(f"MCS needs at least 20 loss observations, got {T}")
    if np.any(L < 0):
        raise ValidationError("losses must be non-negative")
    if statistic not in ("Tmax", "TR"):
        raise ValidationError(f"unknown statistic {statistic!r}")
    block_len = block_len or math.ceil(T ** (1.0 / 3.0))
    rng = np.random.default_rng(seed)
    idx = _block_bootstrap_indices(T, block_len, n_boot, rng)
    mean = L.mean(axis=0)
    boot = np.concatenate([L[chunk].mean(axis=1) for chunk in np.array_split(idx, max(1, n_boot // 500))])
    dev = boot - mean

    alive = list(range(K))
    order, raw_p = [], []
    while len(alive) > 1:
        a = np.array(alive)
        if statistic == "Tmax":
            d = mean[a] - mean[a].mean()
            z = dev[:, a] - dev[:, a].mean(axis=1, keepdims=True)
            sd = np.sqrt(np.mean(z**2, axis=0))
            t = _safe_ratio(d, sd)
            stat = t.max()
            tb = _safe_ratio(z, sd[None, :]).max(axis=1)
            worst = int(np.argmax(t))
        else:
            d = mean[a][:, None] - mean[a][None, :]
            z = dev[:, a][:, :, None] - dev[:, a][:, None, :]
            sd = np.sqrt(np.mean(z**2, axis=0))
            t = _safe_ratio(d, sd)
            stat = np.abs(t).max()
            tb = np.abs(_safe_ratio(z, sd[None])).reshape(n_boot, -1).max(axis=1)
            worst = int(np.argmax(t.max(axis=1)))
        p = float(np.mean(tb >= stat)) if np.isfinite(stat) else 0.0
        if stat == 0.0:
            p = 1.0
        raw_p.append(p)
        order.append(alive.pop(worst))
    raw_p.append(1.0)
    order.append(alive[0])
    pvals = np.maximum.accumulate(raw_p)
    pv = pd.Series({names[k]: float(p) for k, p in zip(order, pvals)})[names]
    survivors = [n for n in names if pv[n] >= alpha]
    return MCSResult(survivors, pv, [names[k] for k in order], statistic, alpha)


def vintage_fan(run: VintageRun) -> pd.DataFrame:
    """Long table ``vintage_date, estimate_date, value`` stacking every vintage."""
    if len(run.vintages) < 2:
        raise ValidationError("a fan needs at least two vintages")
    frames = []
    for v, s in run.vintages.items():
        frames.append(pd.DataFrame({
            "vintage_date": v,
            "estimate_date": s.dates.strftime("%Y-%m") if s.dates is not None else np.arange(1, len(s.values) + 1),
            "value": s.values,
        }))
    return pd.concat(frames, ignore_index=True)


def evaluation_report(runs: dict[str, VintageRun], headline: InflationSeries, samples=None,
                      horizons=(1, 3, 6, 9, 12), windows=None, alpha: float = 0.25,
                      statistic: str = "Tmax", n_boot: int = 5000, seed: int = 0) -> dict:
    """Revision and forecast tables for a set of runs at one inflation rate.

    Entries that cannot be computed on the available data are reported as
    ``None`` with the reason under ``"skipped"``.
    """
    samples = samples if samples is not None else SAMPLE_PRESETS
    windows = windows if windows is not None else {"2020-01/2023-12": ("2020-01", "2023-12"),
                                                   "2007-01/2023-12": ("2007-01", "2023-12")}
    report: dict = {"revisions": {}, "forecasts": {}, "skipped": []}
    for name, sample in samples.items():
        row = {}
        for mid, run in runs.items():
            for metric in ("RMSD", "MAD"):
                try:
                    row.setdefault(mid, {})[metric] = revision_stats(run, sample, metric)
                except (ValidationError, NumericalError, KeyError) as exc:
                    row.setdefault(mid, {})[metric] = None
                    report["skipped"].append(f"revisions {name} {mid} {metric}: {exc}")
        report["revisions"][name] = row
    for wname, window in windows.items():
        for h in horizons:
            key = f"{wname}|h={h}"
            try:
                lp = loss_panel(runs, headline, h, window)
                entry = {"rmsfe": {m: float(np.sqrt(lp[m].mean())) for m in lp.columns}}
                if len(runs) >= 2:
                    entry["mcs"] = mcs(lp, alpha, statistic, n_boot=n_boot, seed=seed).to_dict()
                report["forecasts"][key] = entry
            except ValidationError as exc:
                report["forecasts"][key] = None
                report["skipped"].append(f"forecasts {key}: {exc}")
    return report
