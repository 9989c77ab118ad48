import os
import sys
from pathlib import Path

# single-threaded BLAS so training curves are bit-reproducible
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

sys.path.insert(0, str(Path(__file__).parent))

import pytest  # noqa: E402

_CRITERIA: dict = {}


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
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "seen": False, "notes": []})
    if rep.when == "call" or rep.failed or rep.skipped:
        entry["seen"] = True
        if rep.failed or rep.skipped:
            entry["ok"] = False
    for key, value in getattr(item, "user_properties", []):
        if key == "note" and value not in entry["notes"]:
            entry["notes"].append(value)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["ok"] and e["seen"] else "FAIL"
        line = f"[{status}] criterion {number}: {e['title']}"
        if e["notes"]:
            line += " | " + "; ".join(e["notes"])
        tr.write_line(line)
