import pytest

_acceptance_results = []


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "acceptance(num, name): marks a test as one acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        marker = item.get_closest_marker("acceptance")
        if marker is not None:
            _acceptance_results.append(
                (marker.kwargs["num"], marker.kwargs["name"], rep.passed,
                 rep.duration))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, passed, duration in sorted(_acceptance_results):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(
            f"criterion {num} [{status}] {name} ({duration:.1f}s)")
