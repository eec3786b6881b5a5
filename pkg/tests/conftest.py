import pytest

# Fig. 1 passwords are 4-digit PINs, so the full PIN space makes a natural
# 10^4-word dictionary that contains them.
PIN_DICTIONARY = [f"{i:04d}" for i in range(10_000)]


@pytest.fixture(scope="session")
def pins():
    return PIN_DICTIONARY


@pytest.fixture
def store_dir(tmp_path):
    d = tmp_path / "stores"
    d.mkdir()
    return d


_acceptance = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(id, title): build exit criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    key = marker.args[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance[key] = (marker.args[1], report.outcome, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_acceptance, key=lambda k: int(k[2:])):
        title, outcome, duration = _acceptance[key]
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {key:<5} {title}  ({duration:.2f}s)")
