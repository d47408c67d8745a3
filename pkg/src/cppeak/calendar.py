"""Program calendars and the coincident-peak rule registry."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable

import yaml

from .errors import ConfigurationError, ParseError, UnknownJurisdictionError

DAY_FILTERS = ("business-days", "all-days")
BASE_INTERVALS = ("hour", "quarter-hour")
ALLOWED_PEAK_COUNTS = (1, 4, 5, 12)


@dataclass(frozen=True)
class CpProgramRule:
    jurisdiction_id: str
    n_peaks: int
    window: tuple[tuple[int, int], tuple[int, int]]  # ((month, day), (month, day))
    day_filter: str = "business-days"
    base_interval: str = "hour"
    wraps_year: bool = False
    description: str = ""

    def __post_init__(self):
        if self.n_peaks < 1:
            raise ConfigurationError(f"{self.jurisdiction_id}: n_peaks must be >= 1")
        if self.day_filter not in DAY_FILTERS:
            raise ConfigurationError(f"{self.jurisdiction_id}: bad day_filter {self.day_filter!r}")
        if self.base_interval not in BASE_INTERVALS:
            raise ConfigurationError(
                f"{self.jurisdiction_id}: bad base_interval {self.base_interval!r}"
            )
        start, end = self.window
        for month, day in (start, end):
            try:
                dt.date(2000, month, day)  # leap year accepts Feb 29
            except ValueError as exc:
                raise ConfigurationError(f"{self.jurisdiction_id}: bad window date {month}-{day}") from exc
        if self.wraps_year:
            if end >= start:
                raise ConfigurationError(
                    f"{self.jurisdiction_id}: wrapping window must end before its start month-day"
                )
        elif end < start:
            raise ConfigurationError(
                f"{self.jurisdiction_id}: window ends {end} before it starts {start}"
            )

    def window_dates(self, year: int) -> tuple[dt.date, dt.date]:
        """First and last calendar date of the program year anchored at ``year``."""
        (sm, sd), (em, ed) = self.window
        start = _clip_date(year, sm, sd)
        end = _clip_date(year + 1 if self.wraps_year else year, em, ed)
        return start, end

    def program_year_of(self, day: dt.date) -> int | None:
        """Anchor year of the program year containing ``day``, or None."""
        for year in (day.year, day.year - 1):
            start, end = self.window_dates(year)
            if start <= day <= end:
                return year
        return None


@dataclass(frozen=True)
class ProgramYear:
    rule: CpProgramRule
    year: int
    eligible_days: tuple[dt.date, ...]

    def __contains__(self, day):
        return day in self._day_set

    def __iter__(self):
        return iter(self.eligible_days)

    def __len__(self):
        return len(self.eligible_days)

    @property
    def _day_set(self):
        # frozen dataclass: cache on first use
        cached = self.__dict__.get("_days")
        if cached is None:
            cached = frozenset(self.eligible_days)
            object.__setattr__(self, "_days", cached)
        return cached


def _clip_date(year, month, day):
    # Feb 29 windows in non-leap years collapse to Feb 28
    try:
        return dt.date(year, month, day)
    except ValueError:
        return dt.date(year, month, day - 1)


def is_business_day(day: dt.date, holidays: Iterable[dt.date] = ()) -> bool:
    return day.weekday() < 5 and day not in holidays


def eligible_days(rule: CpProgramRule, year: int, holidays: Iterable[dt.date] = ()) -> ProgramYear:
    """All window dates of program year ``year`` that pass the rule's day filter."""
    holidays = frozenset(holidays)
    start, end = rule.window_dates(year)
    days = []
    day = start
    one = dt.timedelta(days=1)
    while day <= end:
        if rule.day_filter == "all-days" or is_business_day(day, holidays):
            days.append(day)
        day += one
    return ProgramYear(rule=rule, year=year, eligible_days=tuple(days))


def _parse_month_day(text, jurisdiction_id):
    try:
        month, day = (int(p) for p in str(text).split("-"))
    except ValueError as exc:
        raise ConfigurationError(f"{jurisdiction_id}: window entry {text!r} is not MM-DD") from exc
    return month, day


def rule_from_record(jurisdiction_id: str, record: dict) -> CpProgramRule:
    try:
        start, end = record["window"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"{jurisdiction_id}: window must be [start MM-DD, end MM-DD] ({exc})") from exc
    try:
        return CpProgramRule(
            jurisdiction_id=jurisdiction_id,
            n_peaks=int(record["n_peaks"]),
            window=(_parse_month_day(start, jurisdiction_id), _parse_month_day(end, jurisdiction_id)),
            day_filter=record.get("day_filter", "business-days"),
            base_interval=record.get("base_interval", "hour"),
            wraps_year=bool(record.get("wraps_year", False)),
            description=record.get("description", ""),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"{jurisdiction_id}: malformed registry record ({exc})") from exc


def load_registry(path: str | Path | None = None) -> dict[str, CpProgramRule]:
    """Read a registry file; the bundled one when ``path`` is None."""
    if path is None:
        text = resources.files("cppeak.data").joinpath("registry.yaml").read_text()
    else:
        text = Path(path).read_text()
    raw = yaml.safe_load(text) or {}
    if not isinstance(raw, dict):
        raise ConfigurationError("registry file must map jurisdiction ids to records")
    return {str(key): rule_from_record(str(key), rec) for key, rec in raw.items()}


@lru_cache(maxsize=1)
def _default_registry():
    return load_registry()


def registry_lookup(jurisdiction_id: str, registry: dict[str, CpProgramRule] | None = None) -> CpProgramRule:
    registry = _default_registry() if registry is None else registry
    try:
        return registry[jurisdiction_id]
    except KeyError:
        raise UnknownJurisdictionError(jurisdiction_id, registry) from None


def load_holidays(path: str | Path) -> frozenset[dt.date]:
    """One ISO-8601 date per line; blank lines and ``#`` comments ignored."""
    days = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                days.add(dt.date.fromisoformat(line))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: not an ISO date: {line!r}") from exc
    return frozenset(days)


def bundled_holidays(name: str = "nerc") -> frozenset[dt.date]:
    """Shipped holiday lists: ``nerc`` or ``us_federal`` (2010-2030)."""
    with resources.as_file(resources.files("cppeak.data").joinpath(f"holidays_{name}.txt")) as p:
        return load_holidays(p)
