"""Static figures for scenario batches, probability timelines and backtests.

Figures are drawn on bare ``Figure`` objects with the Agg canvas, so no
display or global pyplot state is touched.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

RANK_COLORS = ("#08306b", "#2171b5", "#6baed6", "#9ecae1", "#c6dbef")


def _figure(width=7.0, height=3.5, ncols=1):
    fig = Figure(figsize=(width, height), constrained_layout=True)
    FigureCanvasAgg(fig)
    axes = fig.subplots(1, ncols)
    for ax in np.atleast_1d(axes):
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
        ax.tick_params(labelsize=8)
    return fig, axes


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    return path


def fan_chart(batch, path, actual=None, forecast=None, n_paths: int = 30, title: str | None = None) -> Path:
    """Scenario quantile bands per hour with a few sample paths."""
    hours = np.asarray(batch.hours)
    paths = batch.paths
    fig, ax = _figure()
    for lo, hi, alpha in ((0.05, 0.95, 0.18), (0.25, 0.75, 0.32)):
        qlo, qhi = np.quantile(paths, [lo, hi], axis=0)
        ax.fill_between(hours, qlo, qhi, color="#2171b5", alpha=alpha, lw=0, label=f"{int(lo * 100)}-{int(hi * 100)}%")
    for row in paths[: min(n_paths, len(paths))]:
        ax.plot(hours, row, color="#6baed6", lw=0.4, alpha=0.6)
    ax.plot(hours, np.median(paths, axis=0), color="#08306b", lw=1.2, label="median")
    if forecast is not None:
        ax.plot(hours, np.asarray(forecast)[-len(hours):], "k--", lw=1, label="forecast")
    if actual is not None:
        ax.plot(hours, np.asarray(actual)[-len(hours):], color="#d62728", lw=1.2, label="actual")
    ax.set_xlabel("hour")
    ax.set_ylabel("MW")
    ax.set_title(title or f"{batch.zone_id} {batch.day or ''} (K={batch.K})")
    ax.legend(frameon=False, fontsize=7, ncol=2)
    return _save(fig, path)


def probability_timeline(days, probs, path, daily_max=None, is_cp=None, title: str = "") -> Path:
    """Stacked per-rank CP probabilities by day, daily maximum on a twin axis."""
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    if probs.shape[0] != len(days):
        probs = probs.T
    x = np.arange(len(days))
    fig, ax = _figure(width=9.0)
    bottom = np.zeros(len(days))
    for k in range(probs.shape[1]):
        ax.bar(x, probs[:, k], bottom=bottom, color=RANK_COLORS[k % len(RANK_COLORS)], width=0.8, label=f"rank {k + 1}")
        bottom += probs[:, k]
    ax.set_ylim(0, 1)
    ax.set_ylabel("probability")
    if daily_max is not None:
        ax2 = ax.twinx()
        ax2.plot(x, daily_max, color="0.3", lw=1)
        if is_cp is not None:
            cp = np.asarray(is_cp, dtype=bool)
            ax2.plot(x[cp], np.asarray(daily_max)[cp], "o", color="#d62728", ms=4, label="CP day")
        ax2.set_ylabel("daily max (MW)")
    step = max(1, len(days) // 12)
    ax.set_xticks(x[::step])
    ax.set_xticklabels([str(d) for d in list(days)[::step]], rotation=45, ha="right", fontsize=7)
    if probs.shape[1] > 1:
        ax.legend(frameon=False, fontsize=7, loc="upper left")
    ax.set_title(title)
    return _save(fig, path)


def alerts_per_year(reports: Sequence, path, title: str = "") -> Path:
    """Grouped bars of alerts per year, one group member per strategy."""
    fig, ax = _figure(width=8.0)
    years = sorted({y.year for r in reports for y in r.years})
    width = 0.8 / max(len(reports), 1)
    x = np.arange(len(years))
    for i, r in enumerate(reports):
        by_year = {y.year: y for y in r.years}
        alerts = [by_year[y].n_alerts if y in by_year else 0 for y in years]
        caught = [by_year[y].n_caught if y in by_year else 0 for y in years]
        ax.bar(x + i * width, alerts, width, label=r.strategy)
        ax.scatter(x + i * width, caught, marker="_", color="k", s=40, zorder=3)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels([str(y) for y in years])
    ax.set_ylabel("alerts (tick: CPs caught)")
    ax.legend(frameon=False, fontsize=7, ncol=min(len(reports), 4))
    ax.set_title(title)
    return _save(fig, path)


def rank_error_histograms(reports: Sequence, path, title: str = "") -> Path:
    """Rank-error counts over all alerts and over caught CPs."""
    fig, (ax_a, ax_c) = _figure(width=9.0, ncols=2)
    n = len(reports)
    width = 0.8 / max(n, 1)
    for i, r in enumerate(reports):
        alerts = np.sum([y.alert_rank_hist for y in r.years], axis=0) if r.years else np.zeros(5)
        caught = np.sum([y.cp_rank_hist for y in r.years], axis=0) if r.years else np.zeros(5)
        k = np.arange(len(alerts))
        ax_a.bar(k + i * width, alerts, width, label=r.strategy)
        ax_c.bar(k + i * width, caught, width, label=r.strategy)
    for ax, sub in ((ax_a, "all alerts"), (ax_c, "caught CPs")):
        ax.set_xticks(np.arange(5) + 0.4 - width / 2)
        ax.set_xticklabels(["0", "1", "2", "3", "4+"])
        ax.set_xlabel("rank error (hours)")
        ax.set_title(f"{title} {sub}".strip())
    ax_a.set_ylabel("count")
    ax_a.legend(frameon=False, fontsize=7)
    return _save(fig, path)


def hour_probabilities(est, path, true_hour: int | None = None, title: str = "") -> Path:
    """Bar chart of the CP-hour probability per horizon hour."""
    fig, ax = _figure(width=6.0, height=3.0)
    ax.bar(est.hours, est.probs, color="#2171b5")
    if true_hour is not None:
        ax.axvline(true_hour, color="#d62728", lw=1, ls="--", label="realized peak hour")
        ax.legend(frameon=False, fontsize=7)
    ax.set_xlabel("hour")
    ax.set_ylabel("probability")
    ax.set_title(title or str(est.day or ""))
    return _save(fig, path)
