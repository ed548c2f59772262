import pytest

from nrt import container


@pytest.fixture(autouse=True)
def _clean_memory_store():
    yield
    container.drop_memory()


# One PASS/FAIL line per acceptance criterion, printed after the run.
_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.failed:
        _ACCEPTANCE[name] = "FAIL"
    elif report.when == "call" and name not in _ACCEPTANCE:
        _ACCEPTANCE[name] = "PASS" if report.passed else "SKIP"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in sorted(_ACCEPTANCE.items()):
        number, _, title = name.removeprefix("test_c").partition("_")
        terminalreporter.write_line(f"{status}  criterion {int(number):>2}  {title.replace('_', ' ')}")
