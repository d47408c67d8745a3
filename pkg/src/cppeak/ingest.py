"""Reading hourly load files, forecast vintages, and deviation panels."""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Container, Iterable, Mapping, Sequence
from zoneinfo import ZoneInfo

import numpy as np

from .errors import (
    AlignmentError,
    ConfigurationError,
    DuplicateKeyError,
    InsufficientDataError,
    ParseError,
    ValidationError,
)

log = logging.getLogger(__name__)

HOURS = 24
Key = tuple[dt.date, int]


@dataclass(frozen=True)
class ForecastVintage:
    """A forecast issue time and the first target hour it covers.

    ``issue_offset`` is signed hours from target-day midnight (-0.25 for a
    forecast issued 23:45 the day before). Rows whose issue time falls within
    ``tolerance`` hours of the offset belong to this vintage.
    """

    label: str
    issue_offset: float
    h_s: int = 0
    tolerance: float = 0.5

    def __post_init__(self):
        if not 0 <= self.h_s < HOURS:
            raise ConfigurationError(f"vintage {self.label}: h_s must be in 0..23")

    @property
    def hours(self) -> tuple[int, ...]:
        return tuple(range(self.h_s, HOURS))


VINTAGES = {
    # PJM Mid-Atlantic / RTO feeds, four issues per day
    "23": ForecastVintage("23", -0.25, 0),
    "05": ForecastVintage("05", 5.75, 6),
    "11": ForecastVintage("11", 11.75, 12),
    "17": ForecastVintage("17", 17.75, 18),
    # NYISO day-ahead forecast published at noon the day before
    "noon-da": ForecastVintage("noon-da", -12.0, 0),
}


def get_vintage(label: str | ForecastVintage) -> ForecastVintage:
    if isinstance(label, ForecastVintage):
        return label
    try:
        return VINTAGES[str(label)]
    except KeyError:
        raise ConfigurationError(
            f"unknown vintage {label!r}; presets: {', '.join(VINTAGES)}"
        ) from None


@dataclass(frozen=True)
class HourlyLoadSeries:
    zone_id: str
    kind: str  # "actual" | "forecast"
    points: Mapping[Key, float]

    def __post_init__(self):
        if self.kind not in ("actual", "forecast"):
            raise ConfigurationError(f"series kind must be actual or forecast, got {self.kind!r}")
        frozen = MappingProxyType(dict(self.points))
        for (day, hour), value in frozen.items():
            if not 0 <= hour < HOURS:
                raise ValidationError(f"{self.zone_id}: hour {hour} outside 0..23 on {day}")
            if not (np.isfinite(value) and value > 0):
                raise ValidationError(f"{self.zone_id}: non-positive load {value} at {day} h{hour}")
        object.__setattr__(self, "points", frozen)

    def __len__(self):
        return len(self.points)

    @property
    def dates(self) -> list[dt.date]:
        return sorted({day for day, _ in self.points})

    @property
    def gaps(self) -> list[Key]:
        """Missing (date, hour) keys between the first and last date held."""
        days = self.dates
        if not days:
            return []
        missing = []
        day = days[0]
        while day <= days[-1]:
            for hour in range(HOURS):
                if (day, hour) not in self.points:
                    missing.append((day, hour))
            day += dt.timedelta(days=1)
        return missing

    def day_vector(self, day: dt.date, hours: Sequence[int] = range(HOURS)) -> np.ndarray:
        """Values for ``day`` at ``hours``; NaN where missing."""
        return np.array([self.points.get((day, h), np.nan) for h in hours], dtype=float)

    def day_matrix(self, days: Sequence[dt.date], hours: Sequence[int] = range(HOURS)) -> np.ndarray:
        return np.array([self.day_vector(d, hours) for d in days], dtype=float).reshape(len(days), len(hours))


@dataclass(frozen=True)
class DeviationSeries:
    zone_id: str
    vintage: str
    points: Mapping[Key, float]

    def __post_init__(self):
        object.__setattr__(self, "points", MappingProxyType(dict(self.points)))

    @property
    def dates(self) -> list[dt.date]:
        return sorted({day for day, _ in self.points})

    def day_vector(self, day, hours=range(HOURS)):
        return np.array([self.points.get((day, h), np.nan) for h in hours], dtype=float)


@dataclass(frozen=True)
class DayHourMatrix:
    """Rows are days strictly before ``cutoff``; columns are ``hours``."""

    values: np.ndarray
    dates: tuple[dt.date, ...]
    hours: tuple[int, ...]
    cutoff: dt.date | None = None
    label: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.dates), len(self.hours)):
            raise AlignmentError(
                f"matrix shape {values.shape} does not match {len(self.dates)} days x {len(self.hours)} hours"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.cutoff is not None and self.dates and max(self.dates) >= self.cutoff:
            raise AlignmentError("matrix holds days on or after its cutoff")

    @property
    def shape(self):
        return self.values.shape

    def select(self, dates: Iterable[dt.date]) -> "DayHourMatrix":
        index = {d: i for i, d in enumerate(self.dates)}
        keep = [d for d in dates if d in index]
        rows = [index[d] for d in keep]
        return DayHourMatrix(self.values[rows], tuple(keep), self.hours, self.cutoff, self.label)


@dataclass(frozen=True)
class ColumnSchema:
    """Maps CSV columns onto series fields.

    ``timezone`` declares the wall-clock zone of the timestamps. Aware
    timestamps are converted to it; for naive ones it is used to tell a
    legitimate fall-back repeat from a true duplicate.
    """

    timestamp: str = "timestamp"
    value: str = "value"
    zone_column: str | None = None
    zone_value: str | None = None
    issue_column: str | None = None
    timezone: str | None = None
    timestamp_format: str | None = None
    hour_ending: bool = False

    @classmethod
    def from_mapping(cls, mapping: Mapping | None) -> "ColumnSchema":
        mapping = dict(mapping or {})
        unknown = set(mapping) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown schema keys: {sorted(unknown)}")
        return cls(**mapping)


def _parse_timestamp(text: str, fmt: str | None) -> dt.datetime:
    text = text.strip()
    if fmt:
        return dt.datetime.strptime(text, fmt)
    try:
        return dt.datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        for fallback in ("%m/%d/%Y %I:%M:%S %p", "%m/%d/%Y %H:%M", "%m/%d/%Y %H:%M:%S"):
            try:
                return dt.datetime.strptime(text, fallback)
            except ValueError:
                continue
    raise ValueError(text)


def _is_ambiguous(local: dt.datetime, tz: ZoneInfo) -> bool:
    naive = local.replace(tzinfo=None)
    return naive.replace(tzinfo=tz, fold=0).utcoffset() != naive.replace(tzinfo=tz, fold=1).utcoffset()


def parse_load_csv(
    path: str | Path,
    schema: ColumnSchema | Mapping | None = None,
    zone_id: str = "",
    kind: str = "actual",
    vintage: ForecastVintage | str | None = None,
) -> HourlyLoadSeries:
    """Read one zone's hourly loads from a CSV file.

    Daylight-saving handling: a repeated fall-back hour keeps its first
    occurrence, a skipped spring-forward hour is left as a gap. Any other
    repeated (date, hour) raises :class:`DuplicateKeyError`.

    For forecast files with ``schema.issue_column`` set, only rows issued at
    the vintage's offset are kept (closest issue wins) and target hours
    before the vintage's ``h_s`` are dropped.
    """
    if not isinstance(schema, ColumnSchema):
        schema = ColumnSchema.from_mapping(schema)
    if vintage is not None:
        vintage = get_vintage(vintage)
    tz = ZoneInfo(schema.timezone) if schema.timezone else None
    zone_filter = schema.zone_value if schema.zone_value is not None else zone_id

    points: dict[Key, float] = {}
    issue_gap: dict[Key, float] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = [schema.timestamp, schema.value]
        if schema.zone_column:
            needed.append(schema.zone_column)
        if schema.issue_column:
            needed.append(schema.issue_column)
        missing = [c for c in needed if c not in (reader.fieldnames or [])]
        if missing:
            raise ParseError(f"{path}: missing columns {missing}")

        for row_no, row in enumerate(reader, start=2):
            if schema.zone_column and row[schema.zone_column].strip() != zone_filter:
                continue
            try:
                stamp = _parse_timestamp(row[schema.timestamp], schema.timestamp_format)
            except ValueError:
                raise ParseError(f"{path}: row {row_no}: unparseable timestamp {row[schema.timestamp]!r}") from None
            if stamp.tzinfo is not None and tz is not None:
                stamp = stamp.astimezone(tz)
            if schema.hour_ending:
                stamp = stamp - dt.timedelta(hours=1)
            try:
                value = float(row[schema.value])
            except ValueError:
                raise ParseError(f"{path}: row {row_no}: bad value {row[schema.value]!r}") from None
            if not (np.isfinite(value) and value > 0):
                raise ValidationError(f"non-positive load {value}", row=row_no)
            key = (stamp.date(), stamp.hour)

            if schema.issue_column and vintage is not None:
                try:
                    issued = _parse_timestamp(row[schema.issue_column], schema.timestamp_format)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {row_no}: unparseable issue time {row[schema.issue_column]!r}"
                    ) from None
                if issued.tzinfo is not None and tz is not None:
                    issued = issued.astimezone(tz)
                midnight = dt.datetime.combine(key[0], dt.time())
                offset = (issued.replace(tzinfo=None) - midnight).total_seconds() / 3600.0
                miss = abs(offset - vintage.issue_offset)
                if miss > vintage.tolerance or key[1] < vintage.h_s:
                    continue
                if key in points and issue_gap[key] <= miss:
                    continue
                points[key] = value
                issue_gap[key] = miss
                continue

            if key in points:
                if tz is not None and _is_ambiguous(stamp, tz):
                    log.debug("fall-back repeat at %s kept first", key)
                    continue
                raise DuplicateKeyError(f"duplicate timestamp {key[0]} hour {key[1]}", row=row_no)
            if vintage is not None and key[1] < vintage.h_s:
                continue
            points[key] = value

    series = HourlyLoadSeries(zone_id=zone_id, kind=kind, points=points)
    gaps = series.gaps
    if gaps:
        log.info("%s %s: %d missing hours recorded as gaps", zone_id, kind, len(gaps))
    return series


def compute_deviations(
    actual: HourlyLoadSeries, forecast: HourlyLoadSeries, vintage: ForecastVintage | str
) -> DeviationSeries:
    """Actual minus forecast on the shared keys at hours >= h_s."""
    vintage = get_vintage(vintage)
    if actual.zone_id != forecast.zone_id:
        raise AlignmentError(f"zone mismatch: {actual.zone_id!r} vs {forecast.zone_id!r}")
    points = {
        key: actual.points[key] - fc
        for key, fc in forecast.points.items()
        if key[1] >= vintage.h_s and key in actual.points
    }
    if not points:
        raise AlignmentError(f"{actual.zone_id}: actual and forecast share no hours")
    return DeviationSeries(zone_id=actual.zone_id, vintage=vintage.label, points=points)


def _panel(source, cutoff, eligible, hours, label):
    hours = tuple(hours)
    rows, dates = [], []
    for day in source.dates:
        if cutoff is not None and day >= cutoff:
            break
        if eligible is not None and day not in eligible:
            continue
        vec = source.day_vector(day, hours)
        if np.isnan(vec).any():
            continue
        rows.append(vec)
        dates.append(day)
    if not rows:
        raise InsufficientDataError(f"{label}: no complete day before {cutoff}")
    return DayHourMatrix(np.vstack(rows), tuple(dates), hours, cutoff, label)


def build_deviation_matrix(
    dev: DeviationSeries,
    cutoff: dt.date | None,
    eligible: Container[dt.date] | None = None,
    hours: Sequence[int] | None = None,
) -> DayHourMatrix:
    """Complete-day deviation panel over days strictly before ``cutoff``.

    Columns default to the vintage horizon (hours present in the series).
    Days missing any horizon hour are dropped.
    """
    if hours is None:
        hours = sorted({h for _, h in dev.points})
    return _panel(dev, cutoff, eligible, hours, f"{dev.zone_id}/{dev.vintage}")


def build_load_matrix(
    series: HourlyLoadSeries,
    cutoff: dt.date | None,
    eligible: Container[dt.date] | None = None,
    hours: Sequence[int] = range(HOURS),
) -> DayHourMatrix:
    return _panel(series, cutoff, eligible, hours, f"{series.zone_id}/{series.kind}")


def align_days(*matrices: DayHourMatrix) -> tuple[DayHourMatrix, ...]:
    """Restrict matrices to the days they all share."""
    common = set(matrices[0].dates)
    for m in matrices[1:]:
        common &= set(m.dates)
    if not common:
        raise AlignmentError("matrices share no days")
    order = sorted(common)
    return tuple(m.select(order) for m in matrices)


CANONICAL_COLUMNS = ("zone", "kind", "vintage", "date", "hour", "value")


def write_canonical_csv(path: str | Path, series: Iterable, vintage: str = "") -> None:
    """Export series as ``zone,kind,vintage,date,hour,value`` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CANONICAL_COLUMNS)
        for s in series:
            kind = getattr(s, "kind", "deviation")
            label = getattr(s, "vintage", vintage) if kind == "deviation" else vintage
            for (day, hour) in sorted(s.points):
                writer.writerow([s.zone_id, kind, label, day.isoformat(), hour, repr(float(s.points[(day, hour)]))])


def read_canonical_csv(path: str | Path) -> list:
    grouped: dict[tuple[str, str, str], dict[Key, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CANONICAL_COLUMNS:
            raise ParseError(f"{path}: header must be {','.join(CANONICAL_COLUMNS)}")
        for row_no, row in enumerate(reader, start=2):
            try:
                key = (dt.date.fromisoformat(row["date"]), int(row["hour"]))
                value = float(row["value"])
            except ValueError as exc:
                raise ParseError(f"{path}: row {row_no}: {exc}") from None
            bucket = grouped.setdefault((row["zone"], row["kind"], row["vintage"]), {})
            if key in bucket:
                raise DuplicateKeyError(f"duplicate {key}", row=row_no)
            bucket[key] = value
    out = []
    for (zone, kind, vintage), points in grouped.items():
        if kind == "deviation":
            out.append(DeviationSeries(zone, vintage, points))
        else:
            out.append(HourlyLoadSeries(zone, kind, points))
    return out
