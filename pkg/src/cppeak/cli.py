"""Command-line front end: ``cppeak {fit,simulate,predict,backtest,report}``.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical failure.
Relative data paths resolve against ``data_dir``, which defaults to the
``CPPEAK_DATA_DIR`` environment variable.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .calendar import bundled_holidays, eligible_days, load_holidays, load_registry, registry_lookup
from .errors import ConfigurationError, CPPeakError, DataError, DomainError, IneligibleDayError, NumericalError
from .estimators import (
    RunningCPState,
    percentile_threshold,
    prob_peak_hour,
    prob_rank_bands,
    update_running_cp,
    write_day_estimates,
    write_hour_estimates,
)
from .ingest import ColumnSchema, HourlyLoadSeries, get_vintage, parse_load_csv, read_canonical_csv
from .scengen import EngineConfig, FittedEngine, simulate
from .strategies import (
    DataBundle,
    StrategySpec,
    fit_engine,
    modified_cp_levels,
    read_reports,
    report_tables,
    run_backtests,
    simulate_seasons,
    training_days,
)

log = logging.getLogger("cppeak")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
DATA_ENV = "CPPEAK_DATA_DIR"


@dataclass(frozen=True)
class FileSpec:
    path: str
    format: str = "columns"  # "columns" | "canonical"
    schema: dict = field(default_factory=dict)

    @classmethod
    def from_value(cls, value) -> "FileSpec | None":
        if value is None:
            return None
        if isinstance(value, str):
            return cls(value, "canonical" if value.endswith(".canonical.csv") else "columns")
        if not isinstance(value, dict) or "path" not in value:
            raise ConfigurationError(f"data file entry needs a path: {value!r}")
        fmt = value.get("format", "columns")
        if fmt not in ("columns", "canonical"):
            raise ConfigurationError(f"unknown data format {fmt!r}")
        return cls(str(value["path"]), fmt, dict(value.get("schema") or {}))


@dataclass(frozen=True)
class ZoneConfig:
    zone_id: str
    actual: FileSpec | None = None
    forecast: FileSpec | None = None

    @classmethod
    def from_mapping(cls, mapping, role) -> "ZoneConfig":
        if not isinstance(mapping, dict) or "zone_id" not in mapping:
            raise ConfigurationError(f"{role} zone needs a zone_id")
        return cls(str(mapping["zone_id"]), FileSpec.from_value(mapping.get("actual")), FileSpec.from_value(mapping.get("forecast")))


@dataclass(frozen=True)
class RunConfig:
    program: str
    target: ZoneConfig
    parent: ZoneConfig | None = None
    vintage: str = "23"
    data_dir: str | None = None
    registry: str | None = None
    holidays: str = "nerc"
    engine: EngineConfig = EngineConfig()
    K: int = 1000
    seed: int = 0
    train_start: int = 2011
    refit: str = "daily"
    years: tuple[int, ...] = tuple(range(2014, 2024))
    strategies: tuple[str, ...] = ("1aS",)
    color_floor: float = 0.2
    output: str = "cppeak-out"
    workers: int = 1

    def __post_init__(self):
        if self.K < 1:
            raise ConfigurationError("K must be at least 1")
        if self.target.actual is None:
            raise ConfigurationError(f"zone {self.target.zone_id}: actual load file is required")
        if self.parent is None:
            if self.target.forecast is None:
                raise ConfigurationError(f"zone {self.target.zone_id}: forecast file is required without a parent zone")
        else:
            if self.target.forecast is not None:
                raise ConfigurationError("conditional mode: the child zone must not carry a forecast")
            if self.parent.actual is None or self.parent.forecast is None:
                raise ConfigurationError("conditional mode: parent zone needs actual and forecast files")
        get_vintage(self.vintage)
        for label in self.strategies:
            StrategySpec.parse(label, self.color_floor)

    @property
    def conditional(self) -> bool:
        return self.parent is not None

    @classmethod
    def from_mapping(cls, raw: dict) -> "RunConfig":
        raw = dict(raw or {})
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        if "program" not in raw or "target" not in raw:
            raise ConfigurationError("config needs 'program' and 'target'")
        kw = dict(raw)
        kw["target"] = ZoneConfig.from_mapping(raw["target"], "target")
        kw["parent"] = ZoneConfig.from_mapping(raw["parent"], "parent") if raw.get("parent") else None
        kw["engine"] = EngineConfig.from_mapping(raw.get("engine"))
        if "years" in raw:
            years = raw["years"]
            if isinstance(years, dict):
                years = range(int(years["start"]), int(years["end"]) + 1)
            kw["years"] = tuple(int(y) for y in years)
        if "strategies" in raw:
            s = raw["strategies"]
            kw["strategies"] = (s,) if isinstance(s, str) else tuple(s)
        kw["vintage"] = str(raw.get("vintage", cls.vintage))
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    def manifest(self) -> dict:
        d = dataclasses.asdict(self)
        d["version"] = __version__
        return d


def _set_dotted(raw: dict, dotted: str, value):
    keys = dotted.split(".")
    node = raw
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"cannot override {dotted}: {k} is not a mapping")
    node[keys[-1]] = value


def load_config(path, overrides=()) -> RunConfig:
    """Read YAML, apply ``key.sub=value`` overrides (values parsed as YAML)."""
    try:
        raw = yaml.safe_load(Path(path).read_text()) if path else {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    raw = raw or {}
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        _set_dotted(raw, key.strip(), yaml.safe_load(value))
    return RunConfig.from_mapping(raw)


# --------------------------------------------------------------------------
# data loading


def _resolve(cfg: RunConfig, path: str) -> Path:
    p = Path(os.path.expandvars(path)).expanduser()
    if p.is_absolute():
        return p
    base = cfg.data_dir or os.environ.get(DATA_ENV)
    return Path(base) / p if base else p


def _load_series(cfg: RunConfig, spec: FileSpec, zone_id: str, kind: str) -> HourlyLoadSeries:
    path = _resolve(cfg, spec.path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    vintage = get_vintage(cfg.vintage) if kind == "forecast" else None
    if spec.format == "columns":
        return parse_load_csv(path, ColumnSchema.from_mapping(spec.schema), zone_id, kind, vintage)
    matches = [
        s for s in read_canonical_csv(path)
        if getattr(s, "kind", "") == kind and s.zone_id == zone_id
    ]
    if not matches:
        raise DataError(f"{path}: no {kind} series for zone {zone_id}")
    series = matches[0]
    if vintage is not None:
        series = HourlyLoadSeries(zone_id, kind, {k: v for k, v in series.points.items() if k[1] >= vintage.h_s})
    return series


def build_bundle(cfg: RunConfig) -> DataBundle:
    target = cfg.target
    actual = _load_series(cfg, target.actual, target.zone_id, "actual")
    if cfg.conditional:
        parent = cfg.parent
        parent_actual = _load_series(cfg, parent.actual, parent.zone_id, "actual")
        forecast = _load_series(cfg, parent.forecast, parent.zone_id, "forecast")
    else:
        parent_actual = None
        forecast = _load_series(cfg, target.forecast, target.zone_id, "forecast")
    return DataBundle(actual, forecast, cfg.vintage, parent_actual, _holidays(cfg))


def _holidays(cfg: RunConfig):
    if cfg.holidays in ("nerc", "us_federal"):
        return bundled_holidays(cfg.holidays)
    if cfg.holidays in ("", "none", None):
        return frozenset()
    return load_holidays(_resolve(cfg, cfg.holidays))


def _rule(cfg: RunConfig):
    registry = load_registry(_resolve(cfg, cfg.registry)) if cfg.registry else None
    return registry_lookup(cfg.program, registry)


def _outdir(cfg: RunConfig, sub: str = "") -> Path:
    out = Path(cfg.output) / sub if sub else Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(cfg: RunConfig, out: Path, command: str, extra: dict | None = None):
    manifest = {"command": command, "config": cfg.manifest(), **(extra or {})}
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=1, default=str) + "\n")


def _parse_date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise ConfigurationError(f"bad date {text!r}; use YYYY-MM-DD") from None


def _fit_for_day(cfg: RunConfig, bundle: DataBundle, cutoff: dt.date) -> FittedEngine:
    days = training_days(_rule(cfg), bundle.holidays, cfg.train_start, cutoff)
    engine_cfg = dataclasses.replace(cfg.engine, workers=max(cfg.engine.workers, cfg.workers))
    return fit_engine(bundle, bundle.training_panels(days, cutoff), engine_cfg)


def _engine_for(cfg, bundle, args, day) -> FittedEngine:
    if args.engine:
        engine = FittedEngine.load(args.engine)
        if engine.cutoff is not None and day < engine.cutoff:
            raise DataError(f"engine was trained on data up to {engine.cutoff}, after the requested day {day}")
        return engine
    return _fit_for_day(cfg, bundle, day)


# --------------------------------------------------------------------------
# commands


def cmd_fit(cfg: RunConfig, args) -> int:
    bundle = build_bundle(cfg)
    cutoff = _parse_date(args.date) if args.date else max(bundle.actual.dates) + dt.timedelta(days=1)
    engine = _fit_for_day(cfg, bundle, cutoff)
    out = _outdir(cfg)
    path = Path(args.out) if args.out else out / "engine.json"
    engine.save(path)
    diag = {"cutoff": cutoff.isoformat(), "n_days": engine.n_days, "kind": engine.kind, **engine.diagnostics}
    (out / "fit_diagnostics.json").write_text(json.dumps(diag, indent=1, default=float) + "\n")
    _write_manifest(cfg, out, "fit", {"cutoff": cutoff.isoformat()})
    log.info("selected lambda %g", engine.dev_model.lam)
    print(f"engine written to {path} ({engine.n_days} training days, lambda {engine.dev_model.lam:g})")
    return EXIT_OK


def _simulate_day(cfg, args):
    day = _parse_date(args.date)
    bundle = build_bundle(cfg)
    engine = _engine_for(cfg, bundle, args, day)
    fc = bundle.forecast_for(day, day)
    if fc is None:
        raise DataError(f"no {cfg.vintage} forecast for {day}")
    batch = simulate(engine, fc, cfg.K, cfg.seed, day=day, workers=cfg.workers)
    return day, bundle, engine, fc, batch


def cmd_simulate(cfg: RunConfig, args) -> int:
    from . import plotting

    day, bundle, _, fc, batch = _simulate_day(cfg, args)
    out = _outdir(cfg, f"simulate-{day}")
    batch.to_csv(out / "scenarios.csv")
    batch.to_binary(out / "scenarios.bin")
    fan = batch.fan_chart()
    with open(out / "fan_chart.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        cols = [k for k in fan if k != "hour"]
        w.writerow(["hour", "forecast", *cols])
        for i, h in enumerate(fan["hour"]):
            w.writerow([h, fc[i], *[fan[c][i] for c in cols]])
    if not args.no_plots:
        plotting.fan_chart(batch, out / "fan_chart.png", forecast=fc)
    _write_manifest(cfg, out, "simulate", {"date": day.isoformat(), "violations": batch.n_violations})
    print(f"{batch.K} scenarios for {batch.zone_id} on {day} written to {out}")
    return EXIT_OK


def _running_state(bundle, rule, day) -> tuple[RunningCPState, list[dt.date]]:
    year = rule.program_year_of(day)
    if year is None:
        raise IneligibleDayError(f"{day} lies outside the {rule.jurisdiction_id} program window")
    season = eligible_days(rule, year, bundle.holidays)
    if day not in season:
        raise IneligibleDayError(f"{day} is not an eligible {rule.jurisdiction_id} day")
    state = RunningCPState.empty(rule.n_peaks, year, rule.jurisdiction_id)
    for d in season:
        if d >= day:
            break
        realized = bundle.realized(d, day)
        if np.any(np.isfinite(realized)):
            state = update_running_cp(state, d, realized)
    return state, list(season)


def cmd_predict(cfg: RunConfig, args) -> int:
    from . import plotting

    rule = _rule(cfg)
    day, bundle, _, _, batch = _simulate_day(cfg, args)
    state, season = _running_state(bundle, rule, day)
    prior = [d for y in range(cfg.train_start, state.year) for d in eligible_days(rule, y, bundle.holidays)]
    history = bundle.history_maxima(prior, season[0]) if prior else np.array([])
    out = _outdir(cfg, f"predict-{day}")
    day_rows = []
    for label in cfg.strategies:
        spec = StrategySpec.parse(label, cfg.color_floor)
        thr = 0.0 if spec.percentile is None or history.size == 0 else percentile_threshold(history, spec.percentile)
        est = dataclasses.replace(prob_rank_bands(batch, state, modified_cp_levels(state, spec, thr), thr), day=day)
        day_rows.append((label, est))
    hour = prob_peak_hour(batch)
    with open(out / "day_estimate.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "date", *[f"prob_{k + 1}" for k in range(rule.n_peaks)], "total", "K", "threshold", "levels"])
        for label, est in day_rows:
            w.writerow([label, day, *est.probs, est.total, est.K, est.threshold, ";".join(f"{v:.6g}" for v in est.levels)])
    write_day_estimates(out / "day_estimate_default.csv", [day_rows[0][1]])
    write_hour_estimates(out / "hour_estimate.csv", [hour])
    if not args.no_plots:
        plotting.hour_probabilities(hour, out / "hour_probabilities.png", title=f"{rule.jurisdiction_id} {day}")
        plotting.fan_chart(batch, out / "fan_chart.png")
    _write_manifest(cfg, out, "predict", {"date": day.isoformat()})
    for label, est in day_rows:
        print(f"{day} {label}: P(CP) = {est.total:.3f}  ranks {', '.join(f'{p:.3f}' for p in est.probs)}")
    print(f"most likely hour: {hour.ranked_hours()[0]}")
    return EXIT_OK


def cmd_backtest(cfg: RunConfig, args) -> int:
    rule = _rule(cfg)
    bundle = build_bundle(cfg)
    specs = [StrategySpec.parse(s, cfg.color_floor) for s in cfg.strategies]
    seasons = simulate_seasons(bundle, rule, cfg.years, cfg.K, cfg.seed, cfg.engine, cfg.refit, cfg.train_start, cfg.workers)
    reports = run_backtests(bundle, rule, specs, cfg.years, seasons=seasons)
    out = _outdir(cfg, "backtest")
    table = report_tables(reports, out)
    _write_manifest(cfg, out, "backtest", {"n_accesses": len(bundle.access_log)})
    print(table)
    if not args.no_plots:
        _render(reports, out)
    return EXIT_OK


def _render(reports, out: Path):
    from . import plotting

    figs = out / "figures"
    plotting.alerts_per_year(reports, figs / "alerts_per_year.png")
    plotting.rank_error_histograms(reports, figs / "rank_error.png")
    for r in reports:
        by_year: dict[int, list] = {}
        for a in r.alerts:
            by_year.setdefault(a.day.year, []).append(a)
        for year, recs in sorted(by_year.items()):
            plotting.probability_timeline(
                [a.day for a in recs],
                [a.probs for a in recs],
                figs / f"timeline_{r.strategy}_{year}.png",
                daily_max=[a.daily_max for a in recs],
                is_cp=[a.was_true_cp for a in recs],
                title=f"{r.strategy} {year}",
            )


def cmd_report(cfg: RunConfig | None, args) -> int:
    src = Path(args.input) if args.input else _outdir(cfg, "backtest")
    if not (src / "report.csv").exists():
        raise DataError(f"{src}: no report.csv; run the backtest first")
    reports = read_reports(src)
    print(report_tables(reports, src))
    if not args.no_plots:
        _render(reports, src)
        print(f"figures written to {src / 'figures'}")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "predict": cmd_predict, "backtest": cmd_backtest, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cppeak", description="Monte-Carlo coincident-peak prediction")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML run configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config entry")
    common.add_argument("--data-dir", help=f"base directory for data files (default ${DATA_ENV})")
    common.add_argument("--output", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("-K", "--scenarios", type=int, dest="K")
    common.add_argument("--workers", type=int)
    common.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit and persist a scenario engine")
    p.add_argument("--date", help="training cutoff (exclusive); default day after the last actual")
    p.add_argument("--out", help="engine file path")
    for name, helptext in (("simulate", "write a scenario batch for one day"), ("predict", "CP-day and CP-hour probabilities for one day")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--date", required=True)
        p.add_argument("--engine", help="use a persisted engine instead of refitting")
    sub.add_parser("backtest", parents=[common], help="sliding-expanding-window strategy backtest")
    p = sub.add_parser("report", parents=[common], help="tables and figures from backtest outputs")
    p.add_argument("--input", help="backtest output directory")
    return parser


def _overrides(args) -> list[str]:
    items = list(args.set)
    for key in ("data_dir", "output", "seed", "K", "workers"):
        val = getattr(args, key, None)
        if val is not None:
            items.append(f"{key}={json.dumps(val)}")
    return items


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report" and args.input and not args.config:
            cfg = None
        else:
            if not args.config:
                raise ConfigurationError("--config is required")
            cfg = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](cfg, args)
    except (ConfigurationError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CPPeakError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
