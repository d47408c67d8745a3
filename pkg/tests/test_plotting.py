import datetime as dt
import sys

import numpy as np
import pytest

from cppeak import plotting
from cppeak.estimators import prob_peak_hour
from cppeak.scengen import ScenarioBatch
from cppeak.strategies import BacktestReport, YearResult

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
DAY = dt.date(2023, 7, 20)


@pytest.fixture
def batch():
    paths = 1000 + np.random.default_rng(0).normal(0, 30, size=(200, 12)).cumsum(axis=1)
    return ScenarioBatch("Z", DAY, "11", paths, tuple(range(12, 24)), 0)


def reports():
    def year(y, a, c):
        return YearResult(y, a, c, 5, 0.0, {"R": a, "O": 0, "Y": 0, "G": 0}, {"R": c, "O": 0, "Y": 0, "G": 0}, (a, 0, 0, 0, 0), (c, 0, 0, 0, 0))

    return [
        BacktestReport("1aC", "X", 5, (year(2022, 9, 4), year(2023, 7, 5)), signal="C"),
        BacktestReport("2aC", "X", 5, (year(2023, 6, 5),), signal="C"),
    ]


def is_png(path):
    return path.read_bytes()[:8] == PNG_MAGIC


def test_fan_chart(tmp_path, batch):
    fc = np.full(12, 1000.0)
    path = plotting.fan_chart(batch, tmp_path / "sub" / "fan.png", actual=fc + 5, forecast=fc)
    assert is_png(path)


def test_probability_timeline_accepts_either_orientation(tmp_path):
    days = [DAY + dt.timedelta(days=i) for i in range(10)]
    probs = np.random.default_rng(1).dirichlet(np.ones(6), size=10)[:, :5]
    a = plotting.probability_timeline(days, probs, tmp_path / "a.png", daily_max=np.arange(10.0), is_cp=[i % 3 == 0 for i in range(10)])
    b = plotting.probability_timeline(days, probs.T, tmp_path / "b.png")
    assert is_png(a) and is_png(b)


def test_backtest_figures(tmp_path):
    assert is_png(plotting.alerts_per_year(reports(), tmp_path / "alerts.png"))
    assert is_png(plotting.rank_error_histograms(reports(), tmp_path / "ranks.png"))


def test_hour_probabilities(tmp_path, batch):
    est = prob_peak_hour(batch)
    assert is_png(plotting.hour_probabilities(est, tmp_path / "h.png", true_hour=18))


def test_no_global_pyplot_state(tmp_path, batch):
    plotting.fan_chart(batch, tmp_path / "f.png")
    if "matplotlib.pyplot" in sys.modules:
        assert sys.modules["matplotlib.pyplot"].get_fignums() == []
