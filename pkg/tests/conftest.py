import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

DATA_ENV = "CPPEAK_DATA_DIR"

_RESULTS = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.skipped and rep.when in ("setup", "call"):
        reason = rep.longrepr[2] if isinstance(rep.longrepr, tuple) else ""
        _RESULTS.append((number, title, "SKIP", reason.removeprefix("Skipped: ")))
    elif rep.when == "call":
        _RESULTS.append((number, title, "PASS" if rep.passed else "FAIL", detail))
    elif rep.when == "setup" and rep.failed:
        _RESULTS.append((number, title, "FAIL", "setup error"))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail in sorted(_RESULTS, key=lambda r: r[0]):
        line = f"[{status}] AC-{number:02d} {title}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)


def data_dir() -> Path | None:
    base = os.environ.get(DATA_ENV)
    return Path(base) if base else None


def data_config(name: str) -> Path:
    """Path of ``<name>.yaml`` under the data directory, or skip."""
    base = data_dir()
    if base is None:
        pytest.skip(f"{DATA_ENV} not set")
    path = base / f"{name}.yaml"
    if not path.exists():
        pytest.skip(f"{path} not found")
    return path
