"""Alert strategies and the sliding-expanding-window backtest.

A strategy is labelled threshold + version + signal, e.g. ``2aS``:

* threshold ``1`` uses no floor, ``2`` the 95th and ``3`` the 90th
  percentile of daily maxima from earlier program years;
* version ``a``-``d`` scales the running CP levels by 1.0, 0.975, 0.95, 0.90;
* signal ``S`` fires when the rank-band total is at least 0.5, ``C`` fires
  from the colour floor upward and grades the alert R/O/Y/G.

The backtest simulates every eligible day of a season once and caches the
scenario maxima and hour probabilities, so any number of strategies can be
scored against the same draws.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import logging
import re
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .calendar import CpProgramRule, eligible_days
from .errors import ConfigurationError, CoverageError, DomainError, InsufficientDataError, LookAheadError
from .estimators import (
    CpDayEstimate,
    CpHourEstimate,
    RunningCPState,
    daily_peak,
    percentile_threshold,
    prob_peak_hour,
    prob_rank_bands,
    update_running_cp,
)
from .ingest import HOURS, DayHourMatrix, ForecastVintage, HourlyLoadSeries, get_vintage
from .scengen import DEFAULT_K, EngineConfig, fit_conditional, fit_unconditional, simulate

log = logging.getLogger(__name__)

THRESHOLD_PERCENTILES = {1: None, 2: 95.0, 3: 90.0}
VERSIONS = {"a": 1.0, "b": 0.975, "c": 0.95, "d": 0.90}
SIMPLE_CUT = 0.5
COLOR_BANDS = (("R", 0.8), ("O", 0.6), ("Y", 0.4))  # strictly above the edge; G below
COLORS = ("R", "O", "Y", "G")
RANK_CLIP = 4
REFIT_MODES = ("daily", "weekly", "yearly")


@dataclass(frozen=True)
class StrategySpec:
    threshold_method: int = 1
    alpha: float = 1.0
    signal: str = "S"
    color_floor: float = 0.2

    def __post_init__(self):
        if self.threshold_method not in THRESHOLD_PERCENTILES:
            raise ConfigurationError(f"threshold method must be one of {sorted(THRESHOLD_PERCENTILES)}")
        if not 0 < self.alpha <= 1:
            raise ConfigurationError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.signal not in ("S", "C"):
            raise ConfigurationError(f"signal must be S or C, got {self.signal!r}")

    @classmethod
    def parse(cls, label: str, color_floor: float = 0.2) -> "StrategySpec":
        m = re.fullmatch(r"([123])([abcd])([SC])", label.strip())
        if not m:
            raise ConfigurationError(f"bad strategy label {label!r}; expected e.g. 2aS")
        return cls(int(m[1]), VERSIONS[m[2]], m[3], color_floor)

    @property
    def percentile(self) -> float | None:
        return THRESHOLD_PERCENTILES[self.threshold_method]

    @property
    def label(self) -> str:
        version = next((k for k, v in VERSIONS.items() if v == self.alpha), f"[{self.alpha:g}]")
        return f"{self.threshold_method}{version}{self.signal}"


@dataclass(frozen=True)
class AlertRecord:
    day: dt.date
    prob_total: float
    fired: bool
    color: str | None = None
    was_true_cp: bool = False
    hour_rank: int | None = None  # clipped rank error of the realized peak hour
    probs: tuple[float, ...] = ()
    daily_max: float = float("nan")
    levels: tuple[float, ...] = ()

    @property
    def rank_error(self) -> int | None:
        return self.hour_rank if self.was_true_cp else None


def modified_cp_levels(state: RunningCPState, spec: StrategySpec, threshold: float = 0.0) -> np.ndarray:
    """Per-rank levels ``max(alpha * CP_k, threshold)``; unfilled ranks count as 0."""
    return np.maximum(spec.alpha * state.levels, float(threshold))


def color_of(total: float) -> str:
    for name, edge in COLOR_BANDS:
        if total > edge:
            return name
    return "G"


def classify_signal(est: CpDayEstimate, spec: StrategySpec) -> AlertRecord:
    total = est.total
    if not -1e-12 <= total <= 1 + 1e-12:
        raise DomainError(f"probability total {total} outside [0, 1]")
    if spec.signal == "S":
        fired, color = total >= SIMPLE_CUT, None
    else:
        fired = total >= spec.color_floor
        color = color_of(total) if fired else None
    return AlertRecord(est.day, total, bool(fired), color, probs=est.probs, levels=est.levels)


def rank_error(est_hour: CpHourEstimate, true_peak_hour: int, clip: int = RANK_CLIP) -> int:
    """Zero-based position of the true hour in the probability ranking, clipped."""
    if true_peak_hour not in est_hour.hours:
        raise DomainError(f"hour {true_peak_hour} is outside the horizon {est_hour.hours[0]}..{est_hour.hours[-1]}")
    return min(est_hour.ranked_hours().index(true_peak_hour), clip)


def derive_seed(base_seed: int, day: dt.date, vintage: str) -> int:
    """Per-day seed that does not depend on processing order."""
    ss = np.random.SeedSequence([int(base_seed), day.year, day.toordinal(), zlib.crc32(vintage.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# --------------------------------------------------------------------------
# data access


@dataclass(frozen=True)
class AccessRecord:
    kind: str  # "train" | "history" | "forecast" | "realized"
    first: dt.date
    last: dt.date
    as_of: dt.date


class DataBundle:
    """Series needed by a backtest, with every read checked and logged.

    ``actual`` is the CP zone. ``forecast`` is the vintage forecast of the
    zone it was issued for; in conditional mode that is the parent zone
    whose actual load is ``parent_actual``.
    """

    def __init__(
        self,
        actual: HourlyLoadSeries,
        forecast: HourlyLoadSeries,
        vintage: ForecastVintage | str,
        parent_actual: HourlyLoadSeries | None = None,
        holidays: Iterable[dt.date] = (),
    ):
        self.actual = actual
        self.forecast = forecast
        self.vintage = get_vintage(vintage)
        self.parent_actual = parent_actual
        self.holidays = frozenset(holidays)
        self.access_log: list[AccessRecord] = []
        self._actual_days = set(actual.dates)

    @property
    def conditional(self) -> bool:
        return self.parent_actual is not None

    def _record(self, kind, days, as_of):
        if days:
            self.access_log.append(AccessRecord(kind, min(days), max(days), as_of))

    def _guard_before(self, days, as_of, kind):
        late = [d for d in days if d >= as_of]
        if late:
            raise LookAheadError(f"{kind} access to {min(late)} at decision point {as_of}")

    def has_actual(self, day: dt.date) -> bool:
        return day in self._actual_days

    def training_panels(self, days: Sequence[dt.date], as_of: dt.date) -> dict[str, DayHourMatrix]:
        """Complete-day training matrices over ``days``, all strictly before ``as_of``."""
        self._guard_before(days, as_of, "training")
        hours = self.vintage.hours
        parent = self.parent_actual if self.conditional else self.actual
        dev_rows, dev_days = [], []
        for d in days:
            row = parent.day_vector(d, hours) - self.forecast.day_vector(d, hours)
            if np.all(np.isfinite(row)):
                dev_rows.append(row)
                dev_days.append(d)
        self._record("train", dev_days, as_of)
        if not dev_rows:
            raise InsufficientDataError(f"no complete deviation days before {as_of}")
        out = {"dev": DayHourMatrix(np.vstack(dev_rows), tuple(dev_days), hours, as_of, "deviation")}
        if self.conditional:
            p_rows, c_rows, both = [], [], []
            for d in days:
                p = self.parent_actual.day_vector(d)
                c = self.actual.day_vector(d)
                if np.all(np.isfinite(p)) and np.all(np.isfinite(c)):
                    p_rows.append(p)
                    c_rows.append(c)
                    both.append(d)
            self._record("train", both, as_of)
            if not both:
                raise InsufficientDataError(f"no complete parent/child days before {as_of}")
            hrs = tuple(range(HOURS))
            out["parent"] = DayHourMatrix(np.vstack(p_rows), tuple(both), hrs, as_of, "parent actual")
            out["child"] = DayHourMatrix(np.vstack(c_rows), tuple(both), hrs, as_of, "child actual")
        return out

    def history_maxima(self, days: Sequence[dt.date], as_of: dt.date) -> np.ndarray:
        """Full-day realized maxima on ``days`` (all before ``as_of``)."""
        self._guard_before(days, as_of, "history")
        vals, used = [], []
        for d in days:
            v = self.actual.day_vector(d)
            if np.any(np.isfinite(v)):
                vals.append(np.nanmax(v))
                used.append(d)
        self._record("history", used, as_of)
        return np.asarray(vals, dtype=float)

    def forecast_for(self, day: dt.date, as_of: dt.date) -> np.ndarray | None:
        if day != as_of:
            raise LookAheadError(f"forecast for {day} requested at decision point {as_of}")
        fc = self.forecast.day_vector(day, self.vintage.hours)
        self._record("forecast", [day], as_of)
        return fc if np.all(np.isfinite(fc)) else None

    def realized(self, day: dt.date, as_of: dt.date) -> np.ndarray:
        """Full-day actual load; only readable once the day is over (``as_of > day``)."""
        self._guard_before([day], as_of, "realized")
        self._record("realized", [day], as_of)
        return self.actual.day_vector(day)


# --------------------------------------------------------------------------
# season simulation


@dataclass(frozen=True)
class DayOutcome:
    day: dt.date
    maxima: np.ndarray | None  # K horizon maxima, None when no forecast
    hour_est: CpHourEstimate | None
    realized: np.ndarray  # 24 actual values, NaN where missing


@dataclass(frozen=True)
class SeasonSimulation:
    year: int
    n_peaks: int
    days: tuple[DayOutcome, ...]
    history: np.ndarray = field(repr=False)
    horizon: tuple[int, ...] = ()

    def threshold(self, spec: StrategySpec) -> float:
        if spec.percentile is None:
            return 0.0
        return percentile_threshold(self.history, spec.percentile)


def _program_days(rule, years, holidays):
    return [d for y in years for d in eligible_days(rule, y, holidays)]


def training_days(rule: CpProgramRule, holidays, train_start: int, cutoff: dt.date) -> list[dt.date]:
    """Eligible days of program years from ``train_start`` on, strictly before ``cutoff``."""
    last = rule.program_year_of(cutoff) or cutoff.year
    return [d for d in _program_days(rule, range(train_start, last + 1), holidays) if d < cutoff]


def fit_engine(bundle: DataBundle, panels, config: EngineConfig | None = None):
    if bundle.conditional:
        return fit_conditional(
            panels["parent"],
            panels["child"],
            panels["dev"],
            config,
            parent_zone=bundle.parent_actual.zone_id,
            child_zone=bundle.actual.zone_id,
            vintage=bundle.vintage.label,
        )
    return fit_unconditional(panels["dev"], config, zone_id=bundle.actual.zone_id, vintage=bundle.vintage.label)


def _needs_refit(mode, day, last_fit):
    if last_fit is None:
        return True
    if mode == "daily":
        return True
    if mode == "weekly":
        return day.isocalendar()[:2] != last_fit.isocalendar()[:2]
    return False


def check_coverage(bundle: DataBundle, rule: CpProgramRule, years: Iterable[int]) -> None:
    missing = [y for y in years if not any(bundle.has_actual(d) for d in eligible_days(rule, y, bundle.holidays))]
    if missing:
        raise CoverageError(f"{rule.jurisdiction_id}: no actual load for program years {missing}")


def simulate_season(
    bundle: DataBundle,
    rule: CpProgramRule,
    year: int,
    K: int = DEFAULT_K,
    seed: int = 0,
    config: EngineConfig | None = None,
    refit: str = "daily",
    train_start: int = 2011,
) -> SeasonSimulation:
    """Simulate every eligible day of one program year with an expanding training window."""
    if refit not in REFIT_MODES:
        raise ConfigurationError(f"refit must be one of {REFIT_MODES}")
    config = config or EngineConfig()
    check_coverage(bundle, rule, range(min(train_start, year), year + 1))
    season = list(eligible_days(rule, year, bundle.holidays))
    if not season:
        raise CoverageError(f"{rule.jurisdiction_id}: program year {year} has no eligible days")
    prior = _program_days(rule, range(train_start, year), bundle.holidays)
    history = bundle.history_maxima(prior, season[0])

    engine, last_fit = None, None
    outcomes = []
    for i, day in enumerate(season):
        if _needs_refit(refit, day, last_fit):
            train_days = prior + (season[:i] if refit != "yearly" else [])
            engine = fit_engine(bundle, bundle.training_panels(train_days, day), config)
            last_fit = day
        fc = bundle.forecast_for(day, day)
        maxima = hour_est = None
        if fc is not None:
            batch = simulate(engine, fc, K, derive_seed(seed, day, bundle.vintage.label), day=day)
            maxima = batch.daily_max()
            hour_est = prob_peak_hour(batch)
        else:
            log.warning("%s: no %s forecast, day scored as no alert", day, bundle.vintage.label)
        realized = bundle.realized(day, day + dt.timedelta(days=1))
        outcomes.append(DayOutcome(day, maxima, hour_est, realized))
    return SeasonSimulation(year, rule.n_peaks, tuple(outcomes), history, bundle.vintage.hours)


# --------------------------------------------------------------------------
# scoring


@dataclass(frozen=True)
class YearResult:
    year: int
    n_alerts: int
    n_caught: int
    n_true_cp: int
    threshold: float
    alert_colors: dict
    caught_colors: dict
    alert_rank_hist: tuple[int, ...]
    cp_rank_hist: tuple[int, ...]
    n_days: int = 0
    n_skipped: int = 0


@dataclass(frozen=True)
class BacktestReport:
    strategy: str
    jurisdiction_id: str
    n_peaks: int
    years: tuple[YearResult, ...] = ()
    alerts: tuple[AlertRecord, ...] = ()
    signal: str = "S"

    def averages(self) -> dict:
        if not self.years:
            return {}
        ys = self.years
        out = {
            "n_alerts": float(np.mean([y.n_alerts for y in ys])),
            "n_caught": float(np.mean([y.n_caught for y in ys])),
            "n_true_cp": float(np.mean([y.n_true_cp for y in ys])),
        }
        for c in COLORS:
            out[f"alerts_{c}"] = float(np.mean([y.alert_colors.get(c, 0) for y in ys]))
            out[f"caught_{c}"] = float(np.mean([y.caught_colors.get(c, 0) for y in ys]))
        return out


def _hour_rank(hour_est: CpHourEstimate | None, realized: np.ndarray) -> int | None:
    if hour_est is None or not np.any(np.isfinite(realized)):
        return None
    _, hour = daily_peak(realized)
    if hour not in hour_est.hours:
        return RANK_CLIP  # realized peak before the horizon starts
    return rank_error(hour_est, hour)


def score_season(season: SeasonSimulation, spec: StrategySpec, jurisdiction_id: str = "") -> tuple[YearResult, list[AlertRecord]]:
    threshold = season.threshold(spec)
    state = RunningCPState.empty(season.n_peaks, season.year, jurisdiction_id)
    records = []
    skipped = 0
    for out in season.days:
        levels = modified_cp_levels(state, spec, threshold)
        if out.maxima is not None:
            est = dataclasses.replace(prob_rank_bands(out.maxima, modified_levels=levels, threshold=threshold), day=out.day)
        else:
            est = CpDayEstimate(out.day, (0.0,) * season.n_peaks, 0, tuple(levels), threshold)
        rec = classify_signal(est, spec)
        dmax = float(np.nanmax(out.realized)) if np.any(np.isfinite(out.realized)) else float("nan")
        records.append(
            AlertRecord(rec.day, rec.prob_total, rec.fired, rec.color, False, _hour_rank(out.hour_est, out.realized), rec.probs, dmax, rec.levels)
        )
        if np.isfinite(dmax):
            state = update_running_cp(state, out.day, out.realized)
        else:
            skipped += 1
            log.warning("%s: no realized load, running CP not updated", out.day)

    true_days = set(state.days)
    records = [
        AlertRecord(r.day, r.prob_total, r.fired, r.color, r.day in true_days, r.hour_rank, r.probs, r.daily_max, r.levels)
        for r in records
    ]
    alerts = [r for r in records if r.fired]
    caught = [r for r in alerts if r.was_true_cp]
    hist = lambda rs: tuple(sum(1 for r in rs if r.hour_rank == k) for k in range(RANK_CLIP + 1))
    colors = lambda rs: {c: sum(1 for r in rs if r.color == c) for c in COLORS} if spec.signal == "C" else {}
    result = YearResult(
        year=season.year,
        n_alerts=len(alerts),
        n_caught=len(caught),
        n_true_cp=len(true_days),
        threshold=threshold,
        alert_colors=colors(alerts),
        caught_colors=colors(caught),
        alert_rank_hist=hist(alerts),
        cp_rank_hist=hist(caught),
        n_days=len(records),
        n_skipped=skipped,
    )
    return result, records


def simulate_seasons(
    bundle: DataBundle,
    rule: CpProgramRule,
    years: Sequence[int],
    K: int = DEFAULT_K,
    seed: int = 0,
    config: EngineConfig | None = None,
    refit: str = "daily",
    train_start: int = 2011,
    workers: int = 1,
) -> dict[int, SeasonSimulation]:
    """Seasons are independent given the bundle and may run concurrently."""
    run = lambda y: simulate_season(bundle, rule, y, K, seed, config, refit, train_start)
    if workers > 1 and len(years) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sims = list(pool.map(run, years))
    else:
        sims = [run(y) for y in years]
    return dict(zip(years, sims))


def run_backtests(
    bundle: DataBundle,
    rule: CpProgramRule,
    specs: Sequence[StrategySpec],
    years: Sequence[int] = tuple(range(2014, 2024)),
    K: int = DEFAULT_K,
    seed: int = 0,
    config: EngineConfig | None = None,
    refit: str = "daily",
    train_start: int = 2011,
    workers: int = 1,
    seasons: dict[int, SeasonSimulation] | None = None,
) -> list[BacktestReport]:
    """Score several strategies against one shared set of simulated seasons."""
    if seasons is None:
        seasons = simulate_seasons(bundle, rule, years, K, seed, config, refit, train_start, workers)
    reports = []
    for spec in specs:
        results, records = [], []
        for y in years:
            res, recs = score_season(seasons[y], spec, rule.jurisdiction_id)
            results.append(res)
            records.extend(recs)
        reports.append(BacktestReport(spec.label, rule.jurisdiction_id, rule.n_peaks, tuple(results), tuple(records), spec.signal))
    return reports


def run_backtest(bundle, rule, spec: StrategySpec, years=tuple(range(2014, 2024)), K=DEFAULT_K, seed=0, **kwargs) -> BacktestReport:
    return run_backtests(bundle, rule, [spec], years, K, seed, **kwargs)[0]


# --------------------------------------------------------------------------
# reporting

SUMMARY_COLUMNS = ("strategy", "signal", "years", "alerts", "cp_caught", *[f"alerts_{c}" for c in COLORS], *[f"caught_{c}" for c in COLORS])
YEAR_COLUMNS = (
    "strategy", "year", "threshold", "n_days", "n_alerts", "n_caught", "n_true_cp",
    *[f"alerts_{c}" for c in COLORS], *[f"caught_{c}" for c in COLORS],
    *[f"alert_rank_{k}" for k in range(RANK_CLIP + 1)], *[f"cp_rank_{k}" for k in range(RANK_CLIP + 1)],
)
ALERT_COLUMNS = ("strategy", "date", "prob_total", "fired", "color", "is_cp", "hour_rank", "daily_max", "probs", "levels")


def _color_cell(avg: dict, prefix: str, n_colors: int) -> str:
    return "/".join(f"{avg[f'{prefix}_{c}']:.1f}" for c in COLORS[:n_colors])


def summary_rows(reports: Sequence[BacktestReport]) -> list[dict]:
    rows = []
    for r in reports:
        avg = r.averages()
        if not avg:
            continue
        row = {"strategy": r.strategy, "signal": r.signal, "years": len(r.years), "alerts": avg["n_alerts"], "cp_caught": avg["n_caught"]}
        row.update({k: v for k, v in avg.items() if k.startswith(("alerts_", "caught_"))})
        rows.append(row)
    return rows


def format_table(reports: Sequence[BacktestReport]) -> str:
    """Average rows: alerts and CPs caught, with R/O/Y(/G) breakdown for colour signals."""
    lines = [f"{'strategy':<10}{'alerts':>8}{'CP':>6}  {'alerts (R/O/Y/G)':<24}{'CP (R/O/Y/G)':<24}"]
    for r in reports:
        avg = r.averages()
        if not avg:
            continue
        if r.signal == "C":
            n_col = 4 if avg["alerts_G"] or avg["caught_G"] else 3
            extra = f"  {_color_cell(avg, 'alerts', n_col):<24}{_color_cell(avg, 'caught', n_col):<24}"
        else:
            extra = ""
        lines.append(f"{r.strategy:<10}{avg['n_alerts']:>8.1f}{avg['n_caught']:>6.1f}{extra}".rstrip())
    return "\n".join(lines)


def report_tables(reports: Sequence[BacktestReport], outdir: str | Path | None = None) -> str:
    """Text table of averages; with ``outdir``, also summary.csv, report.csv and alerts.csv."""
    table = format_table(reports)
    if outdir is None:
        return table
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_COLUMNS)
        w.writeheader()
        w.writerows(summary_rows(reports))
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(YEAR_COLUMNS)
        for r in reports:
            for y in r.years:
                w.writerow(
                    (r.strategy, y.year, y.threshold, y.n_days, y.n_alerts, y.n_caught, y.n_true_cp,
                     *[y.alert_colors.get(c, 0) for c in COLORS], *[y.caught_colors.get(c, 0) for c in COLORS],
                     *y.alert_rank_hist, *y.cp_rank_hist)
                )
    with open(out / "alerts.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ALERT_COLUMNS)
        for r in reports:
            for a in r.alerts:
                w.writerow(
                    (r.strategy, a.day, a.prob_total, int(a.fired), a.color or "", int(a.was_true_cp),
                     "" if a.hour_rank is None else a.hour_rank, a.daily_max,
                     ";".join(f"{p:.6g}" for p in a.probs), ";".join(f"{v:.6g}" for v in a.levels))
                )
    (out / "table.txt").write_text(table + "\n")
    return table


def read_reports(outdir: str | Path) -> list[BacktestReport]:
    """Rebuild reports from ``report.csv`` and ``alerts.csv`` written by :func:`report_tables`."""
    out = Path(outdir)
    years: dict[str, list[YearResult]] = {}
    with open(out / "report.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            years.setdefault(row["strategy"], []).append(
                YearResult(
                    year=int(row["year"]),
                    n_alerts=int(row["n_alerts"]),
                    n_caught=int(row["n_caught"]),
                    n_true_cp=int(row["n_true_cp"]),
                    threshold=float(row["threshold"]),
                    alert_colors={c: int(row[f"alerts_{c}"]) for c in COLORS} if row["strategy"].endswith("C") else {},
                    caught_colors={c: int(row[f"caught_{c}"]) for c in COLORS} if row["strategy"].endswith("C") else {},
                    alert_rank_hist=tuple(int(row[f"alert_rank_{k}"]) for k in range(RANK_CLIP + 1)),
                    cp_rank_hist=tuple(int(row[f"cp_rank_{k}"]) for k in range(RANK_CLIP + 1)),
                    n_days=int(row["n_days"]),
                )
            )
    alerts: dict[str, list[AlertRecord]] = {}
    floats = lambda text: tuple(float(v) for v in text.split(";") if v)
    with open(out / "alerts.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            alerts.setdefault(row["strategy"], []).append(
                AlertRecord(
                    day=dt.date.fromisoformat(row["date"]),
                    prob_total=float(row["prob_total"]),
                    fired=row["fired"] == "1",
                    color=row["color"] or None,
                    was_true_cp=row["is_cp"] == "1",
                    hour_rank=int(row["hour_rank"]) if row["hour_rank"] else None,
                    probs=floats(row["probs"]),
                    daily_max=float(row["daily_max"]),
                    levels=floats(row["levels"]),
                )
            )
    reports = []
    for label, ys in years.items():
        recs = alerts.get(label, [])
        n_peaks = max((len(a.probs) for a in recs), default=1)
        reports.append(BacktestReport(label, "", n_peaks, tuple(ys), tuple(recs), label[-1]))
    return reports
