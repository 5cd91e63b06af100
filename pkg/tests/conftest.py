import pytest

# (criterion number, title, passed, detail) filled in by the acceptance suite
ACCEPTANCE = []


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.done = number, title, False

    def __call__(self, passed, detail=""):
        ACCEPTANCE.append((self.number, self.title, bool(passed), detail))
        self.done = True
        return bool(passed)


@pytest.fixture
def criterion(request):
    """Record the outcome of one acceptance criterion; errors count as failures."""
    marker = request.node.get_closest_marker("criterion")
    record = _Criterion(*marker.args)
    yield record
    if not record.done:
        ACCEPTANCE.append((record.number, record.title, False, "did not complete"))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}: {detail}")
