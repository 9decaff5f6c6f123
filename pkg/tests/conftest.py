import numpy as np
import pytest

from openapmax.data_model import INDICATORS, Category, Dataset, SubjectRecord
from openapmax.pattern import RangeTable, table1_ranges


def make_record(sid="s1", vid="v1", label=Category.AD, **values):
    vals = tuple(values.get(name) for name in INDICATORS)
    return SubjectRecord(sid, vid, vals, label)


def random_dataset(rng, n=30, missing=0.2, labels=(Category.AD, Category.CN, Category.UNKNOWN, None)):
    records = []
    for i in range(n):
        vals = tuple(
            None if rng.random() < missing else float(np.round(rng.normal(0, 10), 6)) for _ in INDICATORS
        )
        records.append(SubjectRecord(f"S{i:03d}", "V1", vals, labels[rng.integers(len(labels))]))
    return Dataset(tuple(records), "all")


@pytest.fixture
def table1():
    return RangeTable(table1_ranges())


# --- acceptance criterion summary -------------------------------------------------

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    n, title = marker.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "details": []})
    entry["ok"] &= rep.passed
    entry["details"].extend(v for k, v in item.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        line = f"criterion {n:2d} {'PASS' if e['ok'] else 'FAIL'}  {e['title']}"
        if e["details"]:
            line += "  [" + "; ".join(e["details"]) + "]"
        terminalreporter.write_line(line)
