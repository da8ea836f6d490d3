from __future__ import annotations

import pytest

_OUTCOMES: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.skipped or rep.failed):
        return
    number, title = mark.args
    entry = _OUTCOMES.setdefault(number, {"title": title, "status": "PASS", "notes": []})
    if rep.failed:
        entry["status"] = "FAIL"
    elif rep.skipped:
        if entry["status"] == "PASS":
            entry["status"] = "SKIP"
        reason = rep.longrepr[-1] if isinstance(rep.longrepr, tuple) else str(rep.longrepr)
        entry["notes"].append(reason.removeprefix("Skipped: "))
    for key, value in item.user_properties:
        if key == "measured" and value not in entry["notes"]:
            entry["notes"].append(value)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        e = _OUTCOMES[number]
        line = f"criterion {number:>2} {e['status']:<4} {e['title']}"
        if e["notes"]:
            line += " | " + "; ".join(e["notes"])
        terminalreporter.write_line(line)
