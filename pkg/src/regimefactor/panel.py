"""Monthly price panels: ingestion, inflation-rate transforms and standardization."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import ValidationError

__all__ = [
    "Transform",
    "Layout",
    "PricePanel",
    "InflationSeries",
    "ingest_csv",
    "to_yoy",
    "to_mom",
    "standardize",
    "headline_series",
]


class Transform(str, enum.Enum):
    RAW_INDEX = "RawIndex"
    YOY = "YoY"
    MOM = "MoM"
    STANDARDIZED = "Standardized"


class Layout(str, enum.Enum):
    LONG = "Long"
    WIDE = "Wide"


def _as_period(value) -> pd.Period:
    if isinstance(value, pd.Period):
        return value.asfreq("M")
    return pd.Period(str(value), freq="M")


def _check_calendar(dates: pd.PeriodIndex) -> None:
    if len(dates) == 0:
        raise ValidationError("panel has no dates")
    if dates.freqstr != "M":
        raise ValidationError(f"calendar must be monthly, got frequency {dates.freqstr!r}")
    ordinals = dates.asi8
    steps = np.diff(ordinals)
    if np.any(steps != 1):
        bad = int(np.flatnonzero(steps != 1)[0])
        raise ValidationError(
            f"calendar is not strictly monthly without gaps: {dates[bad]} is followed by {dates[bad + 1]}"
        )


@dataclass(frozen=True)
class PricePanel:
    """N aligned monthly series stored as a T x N matrix.

    Attributes
    ----------
    dates : pd.PeriodIndex
        Monthly periods, strictly increasing with no gaps.
    series_ids : tuple of str
        Column labels.
    values : ndarray of shape (T, N)
    transform : Transform
    standardization_stats : DataFrame or None
        Per-series ``mean`` and ``std`` captured by :func:`standardize`.
    """

    dates: pd.PeriodIndex
    series_ids: tuple[str, ...]
    values: np.ndarray
    transform: Transform = Transform.RAW_INDEX
    standardization_stats: pd.DataFrame | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        dates = pd.PeriodIndex(self.dates, freq="M")
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ValidationError("values must be a 2-D matrix")
        if values.shape != (len(dates), len(self.series_ids)):
            raise ValidationError(
                f"values shape {values.shape} does not match {len(dates)} dates x {len(self.series_ids)} series"
            )
        if len(set(self.series_ids)) != len(self.series_ids):
            raise ValidationError("series ids must be unique")
        _check_calendar(dates)
        if not np.all(np.isfinite(values)):
            raise ValidationError("panel contains missing or non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "series_ids", tuple(str(s) for s in self.series_ids))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "transform", Transform(self.transform))

    @property
    def n_periods(self) -> int:
        return self.values.shape[0]

    @property
    def n_series(self) -> int:
        return self.values.shape[1]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=self.dates, columns=list(self.series_ids))

    def slice(self, start=None, end=None) -> PricePanel:
        """Sub-panel restricted to ``[start, end]`` (inclusive, either may be None)."""
        mask = np.ones(self.n_periods, dtype=bool)
        if start is not None:
            mask &= self.dates >= _as_period(start)
        if end is not None:
            mask &= self.dates <= _as_period(end)
        if not mask.any():
            raise ValidationError(f"no dates in window [{start}, {end}]")
        return replace(self, dates=self.dates[mask], values=self.values[mask])

    def to_csv(self, path) -> None:
        frame = self.to_frame()
        frame.index = frame.index.strftime("%Y-%m")
        frame.index.name = "date"
        frame.to_csv(path)


@dataclass(frozen=True)
class InflationSeries:
    """A single monthly inflation series in percent."""

    dates: pd.PeriodIndex
    values: np.ndarray
    kind: str = "Headline"

    def __post_init__(self) -> None:
        dates = pd.PeriodIndex(self.dates, freq="M")
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(values) != len(dates):
            raise ValidationError("dates and values differ in length")
        _check_calendar(dates)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "values", values)

    def to_series(self) -> pd.Series:
        return pd.Series(self.values, index=self.dates, name=self.kind)

    def slice(self, start=None, end=None) -> InflationSeries:
        s = self.to_series()
        if start is not None:
            s = s[s.index >= _as_period(start)]
        if end is not None:
            s = s[s.index <= _as_period(end)]
        if s.empty:
            raise ValidationError(f"no dates in window [{start}, {end}]")
        return InflationSeries(s.index, s.to_numpy(), self.kind)

    def align(self, dates: pd.PeriodIndex) -> np.ndarray:
        """Values on ``dates``; every requested date must be present."""
        s = self.to_series()
        missing = pd.PeriodIndex(dates).difference(s.index)
        if len(missing):
            raise ValidationError(f"series lacks {len(missing)} requested dates, first {missing[0]}")
        return s.reindex(dates).to_numpy()


def _parse_dates(raw: pd.Series, path) -> pd.PeriodIndex:
    parsed = pd.to_datetime(raw.astype(str).str.strip(), format="%Y-%m", errors="coerce")
    bad = np.flatnonzero(parsed.isna().to_numpy())
    if bad.size:
        rows = ", ".join(str(i + 2) for i in bad[:10])
        raise ValidationError(f"{path}: unparseable dates (expected YYYY-MM) on rows {rows}")
    return pd.PeriodIndex(parsed, freq="M")


def _parse_numbers(raw: pd.Series, path, label: str) -> np.ndarray:
    text = raw.astype("string").str.strip()
    empty = text.isna() | (text == "")
    numbers = pd.to_numeric(text.where(~empty), errors="coerce")
    bad = np.flatnonzero((numbers.isna() & ~empty).to_numpy())
    if bad.size:
        rows = ", ".join(str(i + 2) for i in bad[:10])
        raise ValidationError(f"{path}: unparseable numeric values in {label!r} on rows {rows}")
    return numbers.to_numpy(dtype=float)


def ingest_csv(path, layout: Layout | str = Layout.WIDE) -> PricePanel:
    """Read a CSV of monthly index levels into a ``RawIndex`` panel.

    ``Long`` files carry ``date, series_id, value`` columns; ``Wide`` files a
    ``date`` column plus one column per series. Blank cells are treated as
    unavailable; series are aligned on the common dates, which must form a
    contiguous monthly calendar.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path}: file not found")
    layout = Layout(layout)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    frame.columns = [c.strip() for c in frame.columns]
    if "date" not in frame.columns:
        raise ValidationError(f"{path}: missing 'date' column")

    if layout is Layout.LONG:
        missing = {"date", "series_id", "value"} - set(frame.columns)
        if missing:
            raise ValidationError(f"{path}: long layout lacks columns {sorted(missing)}")
        dates = _parse_dates(frame["date"], path)
        values = _parse_numbers(frame["value"], path, "value")
        long = pd.DataFrame({"date": dates, "series_id": frame["series_id"].str.strip(), "value": values})
        dup = long.duplicated(["date", "series_id"], keep=False)
        if dup.any():
            keys = sorted({(str(d), s) for d, s in long.loc[dup, ["date", "series_id"]].itertuples(index=False)})
            shown = ", ".join(f"({d}, {s})" for d, s in keys[:10])
            raise ValidationError(f"{path}: duplicate (date, series_id) pairs: {shown}")
        wide = long.pivot(index="date", columns="series_id", values="value")
    else:
        dates = _parse_dates(frame["date"], path)
        if dates.has_duplicates:
            raise ValidationError(f"{path}: duplicate dates {sorted(set(map(str, dates[dates.duplicated()])))}")
        cols = [c for c in frame.columns if c != "date"]
        if not cols:
            raise ValidationError(f"{path}: no series columns")
        wide = pd.DataFrame({c: _parse_numbers(frame[c], path, c) for c in cols}, index=dates)

    wide = wide.sort_index()
    wide = wide[sorted(wide.columns)] if layout is Layout.LONG else wide
    _check_calendar(pd.PeriodIndex(wide.index, freq="M"))
    available = wide.notna()
    common = available.all(axis=1).to_numpy()
    if not common.any():
        raise ValidationError(f"{path}: series share no common dates")
    first, last = np.flatnonzero(common)[[0, -1]]
    if not common[first:last + 1].all():
        gap = wide.index[first + int(np.flatnonzero(~common[first:last + 1])[0])]
        raise ValidationError(f"{path}: interior gap in common calendar at {gap}")
    wide = wide.iloc[first:last + 1]
    return PricePanel(pd.PeriodIndex(wide.index, freq="M"), tuple(map(str, wide.columns)), wide.to_numpy(),
                      Transform.RAW_INDEX)


def _pct_change(panel: PricePanel, lag: int, target: Transform) -> PricePanel:
    if panel.transform is not Transform.RAW_INDEX:
        raise ValidationError(f"{target.value} transform needs a RawIndex panel, got {panel.transform.value}")
    if panel.n_periods < lag + 1:
        raise ValidationError(f"{target.value} transform needs at least {lag + 1} periods, got {panel.n_periods}")
    x = panel.values
    if np.any(x <= 0):
        i, j = np.argwhere(x <= 0)[0]
        raise ValidationError(
            f"non-positive index value {x[i, j]} for series {panel.series_ids[j]!r} at {panel.dates[i]}"
        )
    rate = 100.0 * (x[lag:] / x[:-lag] - 1.0)
    return PricePanel(panel.dates[lag:], panel.series_ids, rate, target)


def to_yoy(panel: PricePanel) -> PricePanel:
    """Year-over-year percent change; drops the first 12 months."""
    return _pct_change(panel, 12, Transform.YOY)


def to_mom(panel: PricePanel) -> PricePanel:
    """Month-over-month percent change; drops the first month."""
    return _pct_change(panel, 1, Transform.MOM)


def standardize(panel: PricePanel, window: tuple | None = None) -> PricePanel:
    """Center and scale each column with moments from ``window`` (default: full sample).

    Moments use the sample standard deviation (``ddof=1``) and are stored in
    ``standardization_stats``.
    """
    if panel.transform is Transform.RAW_INDEX:
        raise ValidationError("standardize expects an inflation-rate panel (YoY or MoM), got RawIndex")
    ref = panel if window is None else panel.slice(*window)
    if ref.n_periods < 2:
        raise ValidationError("standardization window needs at least 2 periods")
    mean = ref.values.mean(axis=0)
    std = ref.values.std(axis=0, ddof=1)
    flat = np.flatnonzero(~(std > 0))
    if flat.size:
        names = ", ".join(panel.series_ids[j] for j in flat[:10])
        raise ValidationError(f"zero-variance series in standardization window: {names}")
    stats = pd.DataFrame({"mean": mean, "std": std}, index=list(panel.series_ids))
    return PricePanel(panel.dates, panel.series_ids, (panel.values - mean) / std, Transform.STANDARDIZED, stats)


def headline_series(panel: PricePanel, series_id: str | None = None) -> InflationSeries:
    """Extract one column of an inflation-rate panel as a headline series."""
    if panel.transform not in (Transform.YOY, Transform.MOM):
        raise ValidationError("headline must be expressed as YoY or MoM inflation")
    if series_id is None:
        if panel.n_series != 1:
            raise ValidationError("series_id required when the panel holds more than one series")
        j = 0
    else:
        j = panel.series_ids.index(series_id)
    return InflationSeries(panel.dates, panel.values[:, j], "Headline")
