import numpy as np
import pytest

SEEDS = (11, 23, 37, 41, 59)

_criteria: dict[int, dict] = {}


@pytest.fixture(params=SEEDS)
def seed(request):
    return request.param


@pytest.fixture
def rng(seed):
    return np.random.default_rng(seed)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "seen": False, "notes": [], "measured": []})
    if rep.when == "call":
        entry["measured"] += [str(v) for k, v in item.user_properties if k == "measured"]
    if rep.when == "call" or rep.failed:
        entry["seen"] = True
        if rep.failed:
            entry["ok"] = False
            entry["notes"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        if not entry["seen"]:
            continue
        status = "PASS" if entry["ok"] else "FAIL"
        extra = f"  (failed: {', '.join(entry['notes'])})" if entry["notes"] else ""
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {entry['title']}{extra}")
        for line in entry["measured"]:
            terminalreporter.write_line(f"    {line}")
