"""Command-line interface.

Every command reads an optional JSON config (``--config``), lets flags
override it, writes its outputs under ``--out`` with fixed file names and
records a ``manifest.json`` (config, config hash, seed, package versions).
Exit status is 0 on success, 1 on invalid input and 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .breaks import StructuralBreakFactorModel
from .evaluate import SAMPLE_PRESETS, ModelSpec, evaluation_report, loss_panel, run_vintages, vintage_fan
from .exceptions import NumericalError, ValidationError
from .factors import estimate_factors, ic_num_factors
from .indicator import fit_baseline, fit_ms, fit_sc, regime_variance_diagnostic
from .markov import em_fit
from .panel import InflationSeries, Layout, PricePanel, Transform, headline_series, ingest_csv, standardize, to_mom, to_yoy
from .simulate import DgpSpec, simulate_panel

logger = logging.getLogger(__name__)

COMMANDS = ("ingest", "factors", "breaks", "msfit", "indicator", "evaluate", "simulate")


@dataclass
class RunConfig:
    """All settings a command may use; unknown keys are rejected."""

    components: str | None = None
    layout: str = "wide"
    input_kind: str = "index"
    transform: str = "yoy"
    headline: str | None = None
    headline_id: str | None = None
    out: str = "out"
    seed: int = 0
    threads: int | None = None
    factors: int = 1
    ic_max: int | None = None
    criterion: str = "ICp2"
    epsilon: float = 0.15
    max_breaks: int = 5
    alpha: float = 0.05
    n_breaks: int | None = None
    bandwidth: int | None = None
    regimes: int = 2
    n_starts: int = 10
    max_iter: int = 500
    tol: float = 1e-6
    variant: str = "baseline"
    models: list[str] = field(default_factory=lambda: ["M1", "M2", "M3", "M4"])
    start_vintage: str | None = None
    end_vintage: str | None = None
    horizons: list[int] = field(default_factory=lambda: [1, 3, 6, 9, 12])
    samples: list[str] | None = None
    windows: list[str] | None = None
    mcs_alpha: float = 0.25
    mcs_statistic: str = "Tmax"
    n_boot: int = 5000
    spec: str | None = None

    @classmethod
    def build(cls, file_values: dict, overrides: dict) -> RunConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted((set(file_values) | set(overrides)) - known)
        if unknown:
            raise ValidationError(f"unknown configuration keys: {', '.join(unknown)}")
        cfg = cls(**{**file_values, **overrides})
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.layout not in ("wide", "long"):
            raise ValidationError("layout must be 'wide' or 'long'")
        if self.input_kind not in ("index", "rate"):
            raise ValidationError("input_kind must be 'index' or 'rate'")
        if self.transform not in ("yoy", "mom"):
            raise ValidationError("transform must be 'yoy' or 'mom'")
        if self.variant not in ("baseline", "sc", "ms"):
            raise ValidationError("variant must be 'baseline', 'sc' or 'ms'")
        if self.mcs_statistic not in ("Tmax", "TR"):
            raise ValidationError("mcs_statistic must be 'Tmax' or 'TR'")
        if not 0 < self.epsilon < 0.5:
            raise ValidationError("epsilon must lie in (0, 0.5)")
        if not 0 < self.alpha < 1 or not 0 < self.mcs_alpha < 1:
            raise ValidationError("significance levels must lie in (0, 1)")
        for name in ("factors", "regimes", "n_starts", "max_iter", "n_boot", "max_breaks"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be at least 1")
        for s in self.samples or []:
            if s not in SAMPLE_PRESETS:
                raise ValidationError(f"unknown sample preset {s!r}; choose from {sorted(SAMPLE_PRESETS)}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def n_jobs(self) -> int:
        if self.threads is not None:
            return max(1, int(self.threads))
        env = os.environ.get("REGIMEFACTOR_THREADS")
        if env:
            try:
                return max(1, int(env))
            except ValueError as exc:
                raise ValidationError(f"REGIMEFACTOR_THREADS must be an integer, got {env!r}") from exc
        return os.cpu_count() or 1


def _versions() -> dict:
    import numba
    import scipy
    import sklearn

    return {
        "regimefactor": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "scikit-learn": sklearn.__version__,
        "numba": numba.__version__,
    }


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (pd.Period, Path)):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, float_format="%.12g")


def _date_strings(dates) -> list[str]:
    return [str(d) for d in dates]


def _rate_transform(cfg: RunConfig) -> Transform:
    return Transform.YOY if cfg.transform == "yoy" else Transform.MOM


def _read_rates(path, cfg: RunConfig) -> PricePanel:
    raw = ingest_csv(path, Layout(cfg.layout.capitalize()))
    if cfg.input_kind == "rate":
        return dataclasses.replace(raw, transform=_rate_transform(cfg))
    return to_yoy(raw) if cfg.transform == "yoy" else to_mom(raw)


def load_panel(cfg: RunConfig) -> PricePanel:
    """Component panel at the configured inflation rate (not standardized)."""
    if not cfg.components:
        raise ValidationError("no component panel given (--components)")
    panel = _read_rates(cfg.components, cfg)
    if cfg.headline and not cfg.headline_id and cfg.headline == cfg.components:
        raise ValidationError("headline_id is required when the headline lives in the component file")
    if cfg.headline_id and cfg.headline == cfg.components:
        keep = [s for s in panel.series_ids if s != cfg.headline_id]
        idx = [panel.series_ids.index(s) for s in keep]
        panel = PricePanel(panel.dates, tuple(keep), panel.values[:, idx], panel.transform)
    return panel


def load_headline(cfg: RunConfig) -> InflationSeries:
    if not cfg.headline:
        raise ValidationError("no headline series given (--headline)")
    rates = _read_rates(cfg.headline, cfg)
    if cfg.headline_id is not None and cfg.headline_id not in rates.series_ids:
        raise ValidationError(f"{cfg.headline}: no column {cfg.headline_id!r}")
    return headline_series(rates, cfg.headline_id)


def _common(panel: PricePanel, headline: InflationSeries) -> tuple[PricePanel, InflationSeries]:
    dates = panel.dates.intersection(headline.dates)
    if dates.empty:
        raise ValidationError("panel and headline share no dates")
    return panel.slice(dates[0], dates[-1]), headline.slice(dates[0], dates[-1])


def cmd_ingest(cfg: RunConfig, out: Path) -> list[str]:
    panel = load_panel(cfg)
    panel.to_csv(out / "panel.csv")
    files = ["panel.csv"]
    if cfg.headline:
        hl = load_headline(cfg)
        frame = pd.DataFrame({"date": hl.dates.strftime("%Y-%m"), "headline": hl.values})
        _write_csv(frame, out / "headline.csv")
        files.append("headline.csv")
    _write_json(out / "ingest.json", {
        "n_periods": panel.n_periods, "n_series": panel.n_series, "transform": panel.transform.value,
        "first_date": str(panel.dates[0]), "last_date": str(panel.dates[-1]), "series_ids": list(panel.series_ids),
    })
    return [*files, "ingest.json"]


def cmd_factors(cfg: RunConfig, out: Path) -> list[str]:
    std = standardize(load_panel(cfg))
    est = estimate_factors(std.values, cfg.factors)
    doc = {"n_factors": cfg.factors, "eigenvalues": est.eigenvalues, "explained_share": est.explained_share}
    if cfg.ic_max is not None:
        doc["ic_choice"] = {"criterion": cfg.criterion, "r_max": cfg.ic_max,
                            "r": ic_num_factors(std.values, cfg.ic_max, cfg.criterion)}
    cols = [f"factor_{k + 1}" for k in range(est.r)]
    frame = pd.DataFrame(est.factors, columns=cols)
    frame.insert(0, "date", std.dates.strftime("%Y-%m"))
    _write_csv(frame, out / "factors.csv")
    load = pd.DataFrame(est.loadings, columns=[f"loading_{k + 1}" for k in range(est.r)])
    load.insert(0, "series_id", list(std.series_ids))
    _write_csv(load, out / "loadings.csv")
    _write_json(out / "factors.json", doc)
    return ["factors.csv", "loadings.csv", "factors.json"]


def cmd_breaks(cfg: RunConfig, out: Path) -> list[str]:
    std = standardize(load_panel(cfg))
    sb = StructuralBreakFactorModel(cfg.factors, epsilon=cfg.epsilon, max_breaks=cfg.max_breaks, alpha=cfg.alpha,
                                    n_breaks=cfg.n_breaks, bandwidth=cfg.bandwidth).fit(std)
    bm = sb.break_model_
    doc = bm.to_dict()
    doc["n_breaks"] = bm.n_breaks
    doc["variance_diagnostic"] = regime_variance_diagnostic(bm).to_dict(orient="records")
    _write_json(out / "breaks.json", doc)
    frame = pd.DataFrame({"date": std.dates.strftime("%Y-%m"), "segment": bm.labels() + 1,
                          "factor": sb.segment_factor_path(), "full_sample_factor": bm.factor_path[:, 0]})
    _write_csv(frame, out / "segment_factors.csv")
    return ["breaks.json", "segment_factors.csv"]


def cmd_msfit(cfg: RunConfig, out: Path) -> list[str]:
    std = standardize(load_panel(cfg))
    model = em_fit(std, cfg.regimes, cfg.factors, cfg.max_iter, cfg.tol, cfg.n_starts, cfg.seed, n_jobs=cfg.n_jobs())
    _write_json(out / "msfit.json", model.to_dict())
    _write_csv(model.probabilities_frame("smoothed"), out / "smoothed_probs.csv")
    _write_csv(model.probabilities_frame("filtered"), out / "filtered_probs.csv")
    paths = pd.DataFrame(model.regime_factor_paths, columns=[f"factor_regime_{j + 1}" for j in range(model.M)])
    paths.insert(0, "date", std.dates.strftime("%Y-%m"))
    paths["regime"] = model.regimes + 1
    paths["regime_factor"] = model.regime_factors
    _write_csv(paths, out / "regime_factors.csv")
    return ["msfit.json", "smoothed_probs.csv", "filtered_probs.csv", "regime_factors.csv"]


def cmd_indicator(cfg: RunConfig, out: Path) -> list[str]:
    panel, hl = _common(load_panel(cfg), load_headline(cfg))
    std = standardize(panel)
    diagnostics: dict = {}
    if cfg.variant == "baseline":
        ind = fit_baseline(hl, estimate_factors(std.values, cfg.factors).factors[:, 0], std.dates)
    elif cfg.variant == "sc":
        sb = StructuralBreakFactorModel(cfg.factors, epsilon=cfg.epsilon, max_breaks=cfg.max_breaks,
                                        alpha=cfg.alpha, n_breaks=cfg.n_breaks, bandwidth=cfg.bandwidth).fit(std)
        ind = fit_sc(hl, sb.break_model_)
        diagnostics["break_dates"] = sb.break_model_.break_dates
        diagnostics["variance_diagnostic"] = regime_variance_diagnostic(sb.break_model_).to_dict(orient="records")
    else:
        model = em_fit(std, cfg.regimes, cfg.factors, cfg.max_iter, cfg.tol, cfg.n_starts, cfg.seed,
                       n_jobs=cfg.n_jobs())
        ind = fit_ms(hl, model)
        diagnostics["transition"] = model.P
        diagnostics["ergodic"] = model.ergodic
        diagnostics["variance_diagnostic"] = regime_variance_diagnostic(model).to_dict(orient="records")
    _write_csv(ind.to_frame(), out / "indicator.csv")
    _write_json(out / "indicator.json", {**ind.to_dict(), "diagnostics": diagnostics})
    return ["indicator.csv", "indicator.json"]


def _parse_window(text: str) -> tuple[str, str]:
    parts = text.split("/")
    if len(parts) != 2:
        raise ValidationError(f"window {text!r} must look like YYYY-MM/YYYY-MM")
    return parts[0], parts[1]


def cmd_evaluate(cfg: RunConfig, out: Path) -> list[str]:
    panel, hl = _common(load_panel(cfg), load_headline(cfg))
    start = cfg.start_vintage or str(panel.dates[min(len(panel.dates) - 1, 24)])
    runs = {}
    for mid in cfg.models:
        spec = ModelSpec.from_id(mid, n_factors=cfg.factors, epsilon=cfg.epsilon, max_breaks=cfg.max_breaks,
                                 alpha=cfg.alpha, n_breaks=cfg.n_breaks, n_starts=cfg.n_starts,
                                 max_iter=cfg.max_iter, tol=cfg.tol, seed=cfg.seed)
        runs[mid] = run_vintages(panel, hl, spec, start, cfg.end_vintage, n_jobs=cfg.n_jobs())
    samples = {s: SAMPLE_PRESETS[s] for s in cfg.samples} if cfg.samples else SAMPLE_PRESETS
    windows = {w: _parse_window(w) for w in cfg.windows} if cfg.windows else None
    report = evaluation_report(runs, hl, samples, tuple(cfg.horizons), windows, cfg.mcs_alpha, cfg.mcs_statistic,
                               cfg.n_boot, cfg.seed)
    report["failures"] = {mid: run.failures for mid, run in runs.items()}
    _write_json(out / "report.json", report)

    realtime = pd.concat({mid: run.realtime_path for mid, run in runs.items()}, axis=1).sort_index()
    realtime.index = realtime.index.strftime("%Y-%m")
    realtime.index.name = "date"
    realtime.reset_index().to_csv(out / "realtime.csv", index=False, float_format="%.12g")
    files = ["report.json", "realtime.csv"]
    fans = [vintage_fan(run).assign(model=mid) for mid, run in runs.items() if len(run.vintages) >= 2]
    if fans:
        _write_csv(pd.concat(fans, ignore_index=True)[["model", "vintage_date", "estimate_date", "value"]],
                   out / "fan.csv")
        files.append("fan.csv")
    rows = []
    for wname, window in (windows or {"2020-01/2023-12": ("2020-01", "2023-12"),
                                      "2007-01/2023-12": ("2007-01", "2023-12")}).items():
        for h in cfg.horizons:
            try:
                lp = loss_panel(runs, hl, h, window)
            except ValidationError:
                continue
            long = lp.reset_index(names="date").melt(id_vars="date", var_name="model", value_name="loss")
            long["date"] = long["date"].astype(str)
            long.insert(0, "h", h)
            long.insert(0, "window", wname)
            rows.append(long)
    if rows:
        _write_csv(pd.concat(rows, ignore_index=True), out / "losses.csv")
        files.append("losses.csv")
    return files


def cmd_simulate(cfg: RunConfig, out: Path) -> list[str]:
    spec = DgpSpec.from_json(cfg.spec) if cfg.spec else DgpSpec()
    panel, truth = simulate_panel(spec, cfg.seed)
    panel.to_csv(out / "panel.csv")
    frame = pd.DataFrame({"date": panel.dates.strftime("%Y-%m"), "headline": truth.headline.values})
    _write_csv(frame, out / "headline.csv")
    _write_json(out / "truth.json", {"spec": spec.to_dict(), "truth": truth.to_dict()})
    return ["panel.csv", "headline.csv", "truth.json"]


HANDLERS = {
    "ingest": cmd_ingest,
    "factors": cmd_factors,
    "breaks": cmd_breaks,
    "msfit": cmd_msfit,
    "indicator": cmd_indicator,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
}


def _csv_list(kind):
    def parse(text: str):
        return [kind(p.strip()) for p in text.split(",") if p.strip()]
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regimefactor", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file of settings; flags take precedence")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
        if name != "simulate":
            p.add_argument("--components", help="CSV of component series")
            p.add_argument("--layout", choices=["wide", "long"])
            p.add_argument("--input-kind", dest="input_kind", choices=["index", "rate"],
                           help="index levels to transform, or rates used as given")
            p.add_argument("--transform", choices=["yoy", "mom"])
            p.add_argument("--headline", help="CSV holding headline inflation")
            p.add_argument("--headline-id", dest="headline_id")
            p.add_argument("--factors", type=int)
        if name == "factors":
            p.add_argument("--ic-max", dest="ic_max", type=int)
            p.add_argument("--criterion", choices=["ICp1", "ICp2"])
        if name in ("breaks", "indicator", "evaluate"):
            p.add_argument("--epsilon", type=float)
            p.add_argument("--max-breaks", dest="max_breaks", type=int)
            p.add_argument("--alpha", type=float)
            p.add_argument("--n-breaks", dest="n_breaks", type=int)
            p.add_argument("--bandwidth", type=int)
        if name in ("msfit", "indicator", "evaluate"):
            p.add_argument("--regimes", type=int)
            p.add_argument("--n-starts", dest="n_starts", type=int)
            p.add_argument("--max-iter", dest="max_iter", type=int)
            p.add_argument("--tol", type=float)
        if name == "indicator":
            p.add_argument("--variant", choices=["baseline", "sc", "ms"])
        if name == "evaluate":
            p.add_argument("--models", type=_csv_list(str), help="comma list such as M1,M3,SC")
            p.add_argument("--start-vintage", dest="start_vintage")
            p.add_argument("--end-vintage", dest="end_vintage")
            p.add_argument("--horizons", type=_csv_list(int))
            p.add_argument("--samples", type=_csv_list(str))
            p.add_argument("--windows", type=_csv_list(str), help="comma list of YYYY-MM/YYYY-MM target windows")
            p.add_argument("--mcs-alpha", dest="mcs_alpha", type=float)
            p.add_argument("--mcs-statistic", dest="mcs_statistic", choices=["Tmax", "TR"])
            p.add_argument("--n-boot", dest="n_boot", type=int)
        if name == "simulate":
            p.add_argument("--spec", help="JSON data-generating process")
    return parser


def run(argv: list[str] | None = None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    verbose = args.pop("verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    file_values = {}
    config_path = args.pop("config", None)
    if config_path:
        try:
            file_values = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(file_values, dict):
            raise ValidationError("config file must hold a JSON object")
    cfg = RunConfig.build(file_values, args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    files = HANDLERS[command](cfg, out)
    _write_json(out / "manifest.json", {
        "command": command,
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "versions": _versions(),
        "outputs": files,
    })
    return 0


def main(argv: list[str] | None = None) -> int:
    try:
        return run(argv)
    except ValidationError as exc:
        print(json.dumps({"error": "validation", "message": str(exc)}), file=sys.stderr)
        return 1
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(json.dumps({"error": "numerical", "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
