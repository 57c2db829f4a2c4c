import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from groundkit.synthetic import make_synthetic_dataset  # noqa: E402


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    """200-record synthetic dataset shared by the slower end-to-end tests."""
    out = tmp_path_factory.mktemp("synthetic")
    make_synthetic_dataset(out, 200, seed=0)
    return out


@pytest.fixture(scope="session")
def synthetic_records(synthetic_dir):
    from groundkit.evalharness import load_grounding_dataset

    records, errors = load_grounding_dataset(synthetic_dir / "records.jsonl")
    assert not errors
    return records


# one line per acceptance criterion, printed in the terminal summary
CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.fixture
def criterion(request):
    """Call ``criterion(n, title)`` first, then ``.detail(text)``; outcome is taken from the test."""

    class Recorder:
        number = None
        title = ""
        info = ""

        def __call__(self, number, title):
            self.number, self.title = number, title
            return self

        def detail(self, text):
            self.info = text
            print(f"criterion {self.number}: {text}")

    rec = Recorder()
    yield rec
    if rec.number is not None:
        failed = getattr(request.node, "_acceptance_failed", True)
        CRITERIA[rec.number] = ("FAIL" if failed else "PASS", f"{rec.title}. {rec.info}".strip())


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call":
        item._acceptance_failed = report.failed


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        status, text = CRITERIA[n]
        terminalreporter.write_line(f"[{status}] criterion {n:>2}: {text}")
