import dataclasses
import datetime as dt

import numpy as np
import pytest

from cppeak.calendar import CpProgramRule, eligible_days
from cppeak.errors import ConfigurationError, CoverageError, DomainError, LookAheadError
from cppeak.estimators import CpDayEstimate, CpHourEstimate, RunningCPState, brute_force_top, update_running_cp
from cppeak.strategies import (
    BacktestReport,
    DataBundle,
    StrategySpec,
    YearResult,
    classify_signal,
    color_of,
    derive_seed,
    modified_cp_levels,
    rank_error,
    read_reports,
    report_tables,
    run_backtest,
    run_backtests,
    score_season,
    simulate_seasons,
)
from synth import synthetic_zone

RULE_1CP = CpProgramRule("SYN-1CP", 1, ((6, 1), (8, 31)))
RULE_5CP = CpProgramRule("SYN-5CP", 5, ((6, 1), (8, 31)))
PEAKS = {dt.date(2013, 7, 17): 1.25, dt.date(2014, 7, 16): 1.25}
YEARS = (2013, 2014)
K = 300


def make_bundle():
    actual, forecast = synthetic_zone(dt.date(2012, 1, 1), dt.date(2014, 12, 31), seed=3, boosts=PEAKS)
    return DataBundle(actual, forecast, "11")


@pytest.fixture(scope="module")
def bundle():
    return make_bundle()


@pytest.fixture(scope="module")
def seasons_1cp(bundle):
    return simulate_seasons(bundle, RULE_1CP, YEARS, K=K, seed=11, refit="yearly", train_start=2012)


@pytest.fixture(scope="module")
def seasons_5cp(bundle):
    return simulate_seasons(bundle, RULE_5CP, YEARS, K=K, seed=11, refit="yearly", train_start=2012)


def est(total, n=1, day=dt.date(2023, 7, 1)):
    return CpDayEstimate(day, (total,) + (0.0,) * (n - 1), 100)


# labels and levels


@pytest.mark.parametrize(
    "label, method, alpha, signal, pct",
    [("1aS", 1, 1.0, "S", None), ("2bC", 2, 0.975, "C", 95.0), ("3cS", 3, 0.95, "S", 90.0), ("1dC", 1, 0.90, "C", None)],
)
def test_label_parsing(label, method, alpha, signal, pct):
    spec = StrategySpec.parse(label)
    assert (spec.threshold_method, spec.alpha, spec.signal, spec.percentile) == (method, alpha, signal, pct)
    assert spec.label == label


@pytest.mark.parametrize("label", ["4aS", "1eS", "1aX", "", "1a"])
def test_bad_labels(label):
    with pytest.raises(ConfigurationError):
        StrategySpec.parse(label)


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        StrategySpec(alpha=0)
    with pytest.raises(ConfigurationError):
        StrategySpec(threshold_method=5)


def test_benchmark_levels_are_raw_running_cps():
    s = RunningCPState.empty(5)
    for i, v in enumerate([30.0, 50.0, 40.0]):
        s = update_running_cp(s, dt.date(2023, 6, 1 + i), [v])
    assert modified_cp_levels(s, StrategySpec.parse("1aS"), 0.0).tolist() == [50, 40, 30, 0, 0]


def test_scaled_level_with_threshold():
    s = update_running_cp(RunningCPState.empty(5), dt.date(2023, 6, 1), [100000.0])
    levels = modified_cp_levels(s, StrategySpec.parse("2cS"), 90000)
    assert levels[0] == pytest.approx(95000)
    assert np.all(levels[1:] == 90000)


def test_empty_state_levels_equal_threshold():
    levels = modified_cp_levels(RunningCPState.empty(5), StrategySpec.parse("2aS"), 137831)
    assert levels.tolist() == [137831] * 5


# signals


def test_color_signal_above_point_eight_is_red():
    rec = classify_signal(est(0.85), StrategySpec.parse("1aC"))
    assert rec.fired and rec.color == "R"


def test_simple_signal_fires_at_half():
    assert classify_signal(est(0.5), StrategySpec.parse("1aS")).fired
    assert not classify_signal(est(0.4999), StrategySpec.parse("1aS")).fired


def test_color_floor_blocks_low_totals():
    rec = classify_signal(est(0.3), StrategySpec.parse("1aC", color_floor=0.4))
    assert not rec.fired and rec.color is None


@pytest.mark.parametrize("total, color", [(0.81, "R"), (0.8, "O"), (0.61, "O"), (0.6, "Y"), (0.41, "Y"), (0.4, "G"), (0.2, "G")])
def test_color_edges(total, color):
    assert color_of(total) == color


def test_floor_is_inclusive():
    rec = classify_signal(est(0.2), StrategySpec.parse("1aC", color_floor=0.2))
    assert rec.fired and rec.color == "G"


def test_classify_uses_rank_total():
    rec = classify_signal(CpDayEstimate(None, (0.2, 0.2, 0.1, 0.0, 0.0), 10), StrategySpec.parse("1aS"))
    assert rec.fired and rec.prob_total == pytest.approx(0.5)
    with pytest.raises(DomainError):
        classify_signal(est(1.5), StrategySpec.parse("1aS"))


# rank error


def test_rank_error_examples():
    hours = tuple(range(12, 24))
    one_hot = CpHourEstimate(None, hours, np.eye(12)[4])
    assert rank_error(one_hot, 16) == 0
    probs = np.linspace(0.12, 0.01, 12)
    probs /= probs.sum()
    ranked = CpHourEstimate(None, hours, probs)
    assert rank_error(ranked, 13) == 1
    assert rank_error(ranked, 20) == 4
    with pytest.raises(DomainError):
        rank_error(ranked, 3)


def test_seed_derivation_is_stable_and_distinct():
    d = dt.date(2020, 7, 1)
    assert derive_seed(1, d, "11") == derive_seed(1, d, "11")
    assert len({derive_seed(1, d, "11"), derive_seed(2, d, "11"), derive_seed(1, d, "05"), derive_seed(1, d + dt.timedelta(1), "11")}) == 4


# backtest on a synthetic season


def test_dominant_day_is_alerted_and_caught(bundle, seasons_1cp):
    for day in PEAKS:
        others = [np.nanmax(bundle.actual.day_vector(d)) for d in eligible_days(RULE_1CP, day.year) if d != day]
        assert np.nanmax(bundle.actual.day_vector(day)) > 1.10 * max(others)
    report = run_backtest(None, RULE_1CP, StrategySpec.parse("1aS"), YEARS, seasons=seasons_1cp)
    for y in report.years:
        assert y.n_true_cp == 1 and y.n_caught == 1
    caught = {a.day for a in report.alerts if a.fired and a.was_true_cp}
    assert caught == set(PEAKS)


def test_unreachable_floor_gives_no_alerts(seasons_1cp):
    report = run_backtest(None, RULE_1CP, StrategySpec.parse("1aC", color_floor=1.01), YEARS, seasons=seasons_1cp)
    assert all(y.n_alerts == 0 and y.n_caught == 0 for y in report.years)


def test_true_cps_match_brute_force(bundle, seasons_5cp):
    (report,) = run_backtests(None, RULE_5CP, [StrategySpec.parse("1aS")], YEARS, seasons=seasons_5cp)
    for year in YEARS:
        days = eligible_days(RULE_5CP, year)
        maxima = [(d, float(np.nanmax(bundle.actual.day_vector(d)))) for d in days]
        expected = {d for d, _ in brute_force_top(maxima, 5)}
        got = {a.day for a in report.alerts if a.was_true_cp and a.day.year == year}
        assert got == expected
    assert all(y.n_true_cp == 5 for y in report.years)


def test_percentile_threshold_never_adds_alerts(seasons_5cp):
    labels = [f"{m}{v}S" for m in (1, 2, 3) for v in "abcd"]
    reports = {r.strategy: r for r in run_backtests(None, RULE_5CP, [StrategySpec.parse(x) for x in labels], YEARS, seasons=seasons_5cp)}
    for v in "abcd":
        for y1, y2, y3 in zip(reports[f"1{v}S"].years, reports[f"2{v}S"].years, reports[f"3{v}S"].years):
            assert y2.n_alerts <= y1.n_alerts
            assert y2.n_alerts <= y3.n_alerts <= y1.n_alerts
    for m in (1, 2, 3):
        counts = [[y.n_alerts for y in reports[f"{m}{v}S"].years] for v in "abcd"]
        assert np.all(np.diff(counts, axis=0) >= 0)


def test_caught_count_grows_as_floor_drops(seasons_5cp):
    floors = [0.9, 0.7, 0.5, 0.3, 0.1, 0.0]
    specs = [StrategySpec.parse("1bC", color_floor=f) for f in floors]
    reports = run_backtests(None, RULE_5CP, specs, YEARS, seasons=seasons_5cp)
    caught = [sum(y.n_caught for y in r.years) for r in reports]
    alerts = [sum(y.n_alerts for y in r.years) for r in reports]
    assert caught == sorted(caught) and alerts == sorted(alerts)
    for r in reports:
        for y in r.years:
            assert sum(y.alert_colors.values()) == y.n_alerts
            assert sum(y.caught_colors.values()) == y.n_caught
            assert sum(y.cp_rank_hist) == y.n_caught


def test_thresholds_use_prior_years_only(bundle, seasons_5cp):
    s = seasons_5cp[2014]
    prior = [*eligible_days(RULE_5CP, 2012), *eligible_days(RULE_5CP, 2013)]
    expected = np.percentile([np.nanmax(bundle.actual.day_vector(d)) for d in prior], 95)
    assert s.threshold(StrategySpec.parse("2aS")) == pytest.approx(expected)
    assert s.threshold(StrategySpec.parse("1aS")) == 0.0


def test_season_simulation_reads_nothing_ahead():
    b = make_bundle()
    simulate_seasons(b, RULE_1CP, (2013,), K=50, seed=0, refit="weekly", train_start=2012)
    assert b.access_log
    for rec in b.access_log:
        if rec.kind in ("train", "history"):
            assert rec.last < rec.as_of
        elif rec.kind == "forecast":
            assert rec.first == rec.last == rec.as_of
        else:
            assert rec.last < rec.as_of


def test_bundle_guards_reject_look_ahead(bundle):
    d = dt.date(2013, 7, 1)
    with pytest.raises(LookAheadError):
        bundle.training_panels([d], d)
    with pytest.raises(LookAheadError):
        bundle.forecast_for(d, d - dt.timedelta(days=1))
    with pytest.raises(LookAheadError):
        bundle.realized(d, d)
    with pytest.raises(LookAheadError):
        bundle.history_maxima([d], d)


def test_shared_seasons_match_standalone_runs(bundle, seasons_1cp):
    spec = StrategySpec.parse("2bS")
    shared = run_backtests(None, RULE_1CP, [StrategySpec.parse("1aS"), spec], YEARS, seasons=seasons_1cp)[1]
    alone = run_backtest(bundle, RULE_1CP, spec, YEARS, K=K, seed=11, refit="yearly", train_start=2012)
    assert shared == alone


def test_coverage_and_refit_validation(bundle):
    with pytest.raises(CoverageError):
        run_backtest(bundle, RULE_1CP, StrategySpec(), (2016,), K=10, train_start=2012)
    with pytest.raises(ConfigurationError):
        simulate_seasons(bundle, RULE_1CP, (2013,), K=10, refit="monthly", train_start=2012)


def test_missing_forecast_day_scores_as_no_alert(seasons_1cp):
    s = seasons_1cp[2013]
    gap = dataclasses.replace(s.days[3], maxima=None, hour_est=None)
    season = dataclasses.replace(s, days=s.days[:3] + (gap,) + s.days[4:])
    _, records = score_season(season, StrategySpec.parse("1aS"))
    assert not records[3].fired and records[3].hour_rank is None


# reporting


def test_empty_report_is_header_only(tmp_path):
    table = report_tables([BacktestReport("1aS", "X", 1)], tmp_path)
    assert len(table.splitlines()) == 1
    for name in ("summary.csv", "report.csv", "alerts.csv"):
        assert len((tmp_path / name).read_text().splitlines()) == 1


def test_averages_are_means_over_years():
    ys = tuple(
        YearResult(2000 + i, a, c, 5, 0.0, {"R": a, "O": 0, "Y": 0, "G": 0}, {"R": c, "O": 0, "Y": 0, "G": 0}, (0,) * 5, (0,) * 5)
        for i, (a, c) in enumerate([(10, 4), (7, 5), (13, 3)])
    )
    avg = BacktestReport("1aC", "X", 5, ys, signal="C").averages()
    assert avg["n_alerts"] == pytest.approx(10.0)
    assert avg["n_caught"] == pytest.approx(4.0)
    assert avg["alerts_R"] == pytest.approx(10.0) and avg["caught_G"] == 0.0


def test_report_round_trip(tmp_path, seasons_5cp):
    specs = [StrategySpec.parse("2aS"), StrategySpec.parse("3cC", color_floor=0.2)]
    reports = run_backtests(None, RULE_5CP, specs, YEARS, seasons=seasons_5cp)
    table = report_tables(reports, tmp_path)
    assert table == (tmp_path / "table.txt").read_text().rstrip("\n")
    assert [line.split()[0] for line in table.splitlines()[1:]] == ["2aS", "3cC"]
    back = read_reports(tmp_path)
    for a, b in zip(reports, back):
        assert a.strategy == b.strategy
        assert a.averages() == pytest.approx(b.averages())
        assert [(r.day, r.fired, r.was_true_cp, r.hour_rank) for r in a.alerts] == [
            (r.day, r.fired, r.was_true_cp, r.hour_rank) for r in b.alerts
        ]
