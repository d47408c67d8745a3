"""Monte-Carlo estimators over scenario batches.

Daily maxima are taken over the batch's horizon hours only. Rank bands are
half-open from below: rank 1 is ``m > level_1`` and rank ``k`` is
``level_k < m <= level_(k-1)``. Argmax ties go to the earliest hour.
"""

from __future__ import annotations

import bisect
import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, DomainError, IneligibleDayError, InsufficientDataError


@dataclass(frozen=True)
class CpEntry:
    value: float
    day: dt.date
    hour: int


@dataclass(frozen=True)
class RunningCPState:
    n_peaks: int
    entries: tuple[CpEntry, ...] = ()
    year: int | None = None
    last_day: dt.date | None = None
    jurisdiction_id: str = ""

    def __post_init__(self):
        if self.n_peaks < 1:
            raise ValueError("n_peaks must be >= 1")
        if len(self.entries) > self.n_peaks:
            raise ValueError("more entries than peaks")

    @classmethod
    def empty(cls, n_peaks: int, year: int | None = None, jurisdiction_id: str = "") -> "RunningCPState":
        return cls(n_peaks=n_peaks, year=year, jurisdiction_id=jurisdiction_id)

    @property
    def full(self) -> bool:
        return len(self.entries) == self.n_peaks

    @property
    def levels(self) -> np.ndarray:
        """Running CP values by rank, padded with 0 for unfilled ranks."""
        vals = [e.value for e in self.entries] + [0.0] * (self.n_peaks - len(self.entries))
        return np.array(vals, dtype=float)

    @property
    def days(self) -> tuple[dt.date, ...]:
        return tuple(e.day for e in self.entries)


def daily_peak(hourly, hours: Sequence[int] | None = None) -> tuple[float, int]:
    """Maximum over finite hours and its hour label; ties go to the earliest hour."""
    vals = np.asarray(hourly, dtype=float)
    labels = list(range(vals.size)) if hours is None else list(hours)
    if not np.any(np.isfinite(vals)):
        raise DataError("no finite hourly values")
    j = int(np.argmax(np.where(np.isfinite(vals), vals, -np.inf)))
    return float(vals[j]), int(labels[j])


def update_running_cp(
    state: RunningCPState,
    day: dt.date,
    hourly_actuals,
    eligible: Iterable[dt.date] | None = None,
    hours: Sequence[int] | None = None,
) -> RunningCPState:
    """Fold one realized day into the running top-n list."""
    if eligible is not None and day not in eligible:
        raise IneligibleDayError(f"{day} is not an eligible program day")
    if state.last_day is not None and day <= state.last_day:
        raise IneligibleDayError(f"{day} is not after the last processed day {state.last_day}")
    value, hour = daily_peak(hourly_actuals, hours)
    entries = list(state.entries)
    if not state.full or value > entries[-1].value:
        # equal values keep the earlier day ahead
        keys = [-e.value for e in entries]
        pos = bisect.bisect_right(keys, -value)
        entries.insert(pos, CpEntry(value, day, hour))
        entries = entries[: state.n_peaks]
    return RunningCPState(state.n_peaks, tuple(entries), state.year, day, state.jurisdiction_id)


def brute_force_top(days_and_maxima: Iterable[tuple[dt.date, float]], n_peaks: int) -> list[tuple[dt.date, float]]:
    """Top ``n_peaks`` days by maximum; equal values ranked by earlier day."""
    return sorted(days_and_maxima, key=lambda t: (-t[1], t[0]))[:n_peaks]


@dataclass(frozen=True)
class CpDayEstimate:
    day: dt.date | None
    probs: tuple[float, ...]
    K: int
    levels: tuple[float, ...] = ()
    threshold: float = 0.0

    @property
    def total(self) -> float:
        return float(sum(self.probs))


@dataclass(frozen=True)
class CpHourEstimate:
    day: dt.date | None
    hours: tuple[int, ...]
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    def prob_of(self, hour: int) -> float:
        return float(self.probs[self.hours.index(hour)])

    def ranked_hours(self) -> list[int]:
        """Hours by decreasing probability; equal probabilities keep the earlier hour first."""
        order = sorted(range(len(self.hours)), key=lambda j: (-self.probs[j], self.hours[j]))
        return [self.hours[j] for j in order]


def _maxima(batch) -> tuple[np.ndarray, dt.date | None]:
    paths = getattr(batch, "paths", batch)
    arr = np.asarray(paths, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise InsufficientDataError("empty scenario batch")
    return arr.max(axis=1), getattr(batch, "day", None)


def _check_after(state: RunningCPState | None, day):
    if state is None or day is None:
        return
    if state.last_day is not None and day <= state.last_day:
        raise DomainError(f"batch day {day} is not after the running state ({state.last_day})")


def prob_new_cp(batch, state: RunningCPState | None = None, modified_level: float | None = None) -> CpDayEstimate:
    """Share of scenarios whose horizon maximum exceeds the level."""
    maxima, day = _maxima(batch)
    _check_after(state, day)
    if modified_level is None:
        modified_level = float(state.levels[0]) if state is not None else 0.0
    p = np.count_nonzero(maxima > modified_level) / maxima.size
    return CpDayEstimate(day, (float(p),), int(maxima.size), (float(modified_level),))


def prob_rank_bands(batch, state: RunningCPState | None = None, modified_levels=None, threshold: float = 0.0) -> CpDayEstimate:
    """Share of scenarios whose horizon maximum falls in each rank band."""
    maxima, day = _maxima(batch)
    _check_after(state, day)
    if modified_levels is None:
        if state is None:
            raise DomainError("need a running state or explicit levels")
        modified_levels = state.levels
    levels = np.asarray(modified_levels, dtype=float)
    if np.any(np.diff(levels) > 0):
        raise DomainError("rank levels must be non-increasing")
    n = levels.size
    asc = levels[::-1]
    # number of levels >= m, i.e. zero-based band index
    band = n - np.searchsorted(asc, maxima, side="left")
    counts = np.bincount(band, minlength=n + 1)[:n]
    probs = tuple(float(c) / maxima.size for c in counts)
    return CpDayEstimate(day, probs, int(maxima.size), tuple(levels.tolist()), float(threshold))


def percentile_threshold(history, k: float) -> float:
    """Linearly interpolated ``k``-th percentile of past daily maxima."""
    h = np.asarray(list(history), dtype=float)
    h = h[np.isfinite(h)]
    if h.size == 0:
        raise InsufficientDataError("empty daily-maximum history")
    if not 0 <= k <= 100:
        raise DomainError(f"percentile must lie in [0, 100], got {k}")
    return float(np.percentile(h, k, method="linear"))


def prob_peak_hour(batch, hours: Sequence[int] | None = None) -> CpHourEstimate:
    """Share of scenarios whose maximum falls at each horizon hour."""
    paths = np.asarray(getattr(batch, "paths", batch), dtype=float)
    if paths.ndim != 2 or paths.shape[0] == 0:
        raise InsufficientDataError("empty scenario batch")
    if hours is None:
        hours = getattr(batch, "hours", None) or range(paths.shape[1])
    idx = np.argmax(paths, axis=1)
    probs = np.bincount(idx, minlength=paths.shape[1]) / paths.shape[0]
    return CpHourEstimate(getattr(batch, "day", None), tuple(int(h) for h in hours), probs)


def write_day_estimates(path: str | Path, estimates: Sequence[CpDayEstimate], extra: dict | None = None) -> None:
    """One CSV row per estimate; ``extra`` maps column names to per-date values."""
    n = max((len(e.probs) for e in estimates), default=1)
    extra = extra or {}
    cols = list(extra)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *[f"prob_{i + 1}" for i in range(n)], "total", "K", "threshold", *cols])
        for e in estimates:
            probs = list(e.probs) + [0.0] * (n - len(e.probs))
            w.writerow([e.day, *probs, e.total, e.K, e.threshold, *[extra[c].get(e.day, "") for c in cols]])


def write_hour_estimates(path: str | Path, estimates: Sequence[CpHourEstimate]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "hour", "prob"])
        for e in estimates:
            for h, p in zip(e.hours, e.probs):
                w.writerow([e.day, h, float(p)])
