import pytest

# criterion number -> (passed, detail); filled in by tests/test_acceptance.py
ACCEPTANCE = {}


def record_criterion(number: int, title: str, passed: bool, detail: str):
    ACCEPTANCE[number] = (title, bool(passed), detail)
    assert passed, f"criterion {number} ({title}): {detail}"


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  [{number:>2}] {title}: {detail}")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    # criteria that crash before reporting still get a FAIL line
    name = item.name
    if report.when == "call" and report.failed and name.startswith("test_criterion_"):
        number = int(name.split("_")[2])
        if number not in ACCEPTANCE:
            ACCEPTANCE[number] = (name, False, f"error: {call.excinfo.typename}: {call.excinfo.value}")
