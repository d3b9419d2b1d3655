import pytest

from metrictype.dataset_io import build_vocabularies, generate_synthetic
from metrictype.table_model import Location, MetricTarget, TableInstance


def two_level_table() -> TableInstance:
    return TableInstance(
        id="two_level",
        caption="model comparison in task 1 and 2".split(),
        row_headers=[["models"] * 4, ["model a", "model b", "model c", "model d"]],
        column_headers=[["task 1", "task 1", "task 2", "task 2"], ["prec", "rec", "prec", "rec"]],
        cells=[["60", "60", "70", "65"]] * 4,
        target=MetricTarget(Location.COLUMN_HEADER, 2, ("prec", "rec", "prec", "rec")),
    )


@pytest.fixture
def two_level():
    return two_level_table()


@pytest.fixture(scope="session")
def synth50():
    return generate_synthetic(7, 50)


@pytest.fixture(scope="session")
def synth_vocabs(synth50):
    return build_vocabularies(synth50)


_criteria = {}
_RANK = {"PASS": 0, "SKIP": 1, "FAIL": 2}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (report.when == "call" or (report.when == "setup" and not report.passed)):
        return
    number, title = marker.args
    state = "SKIP" if report.skipped else ("FAIL" if report.failed else "PASS")
    # a criterion covered by several tests takes its worst outcome
    old = _criteria.get(number, (title, "PASS"))[1]
    _criteria[number] = (title, max(old, state, key=_RANK.get))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, state = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {state} - {title}")
