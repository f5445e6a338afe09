from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        detail = dict(item.user_properties).get("detail", "")
        if rep.outcome == "skipped" and isinstance(rep.longrepr, tuple):
            detail = rep.longrepr[2].removeprefix("Skipped: ")
        entry = _CRITERIA.setdefault(number, {"title": title, "status": [], "detail": []})
        entry["status"].append(status)
        if detail and detail not in entry["detail"]:
            entry["detail"].append(detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        statuses = entry["status"]
        if "FAIL" in statuses:
            status = "FAIL"
        elif all(s == "SKIP" for s in statuses):
            status = "SKIP"
        else:
            status = "PASS"
        detail = "; ".join(entry["detail"])
        terminalreporter.write_line(f"[{status}] {number:>2}. {entry['title']}" + (f" | {detail}" if detail else ""))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def standardized(X: np.ndarray) -> np.ndarray:
    return (X - X.mean(axis=0)) / X.std(axis=0, ddof=1)


@pytest.fixture(scope="session")
def canadian_data():
    """Canadian CPI components and headline, when supplied through environment variables.

    ``REGIMEFACTOR_CPI_COMPONENTS`` points to a wide CSV (``date`` plus one
    column per component) and ``REGIMEFACTOR_CPI_HEADLINE`` to a CSV with
    ``date`` and the all-items series. Both hold index levels unless
    ``REGIMEFACTOR_CPI_INPUT_KIND=rate``, in which case they already hold
    year-over-year inflation. The sample is 1990-01 to 2023-12.
    """
    comp = os.environ.get("REGIMEFACTOR_CPI_COMPONENTS")
    head = os.environ.get("REGIMEFACTOR_CPI_HEADLINE")
    if not comp or not head or not Path(comp).exists() or not Path(head).exists():
        pytest.skip("Canadian CPI data not supplied (set REGIMEFACTOR_CPI_COMPONENTS and REGIMEFACTOR_CPI_HEADLINE)")
    from dataclasses import replace

    from regimefactor.panel import Transform, headline_series, ingest_csv, to_yoy

    kind = os.environ.get("REGIMEFACTOR_CPI_INPUT_KIND", "index")
    panel, hpanel = ingest_csv(comp), ingest_csv(head)
    if kind == "rate":
        panel, hpanel = replace(panel, transform=Transform.YOY), replace(hpanel, transform=Transform.YOY)
    else:
        panel, hpanel = to_yoy(panel), to_yoy(hpanel)
    panel = panel.slice("1990-01", "2023-12")
    headline = headline_series(hpanel, hpanel.series_ids[0] if hpanel.n_series == 1 else None).slice("1990-01", "2023-12")
    return panel, headline
