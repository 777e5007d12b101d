import sys
from collections import defaultdict
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA = {
    1: "relativistic loss scalar goldens",
    2: "analytic vs finite-difference gradients",
    3: "architecture invariants",
    4: "interpolation endpoints and continuity",
    5: "initialization scale and stable desk training",
    6: "single-image overfit beats bicubic by 3 dB",
    7: "bicubic resampler vs brute-force oracle",
    8: "pre-activation sparsity with pretrained VGG19",
    9: "fidelity and no-reference metrics",
    10: "deterministic resume and CLI idempotence",
}

_outcomes = defaultdict(list)
_notes = defaultdict(list)


@pytest.fixture
def criterion_note(request):
    """Attach a line of evidence to the test's criterion in the end-of-run summary."""
    marker = request.node.get_closest_marker("criterion")

    def note(text):
        _notes[marker.args[0] if marker else 0].append(str(text))
    return note


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes[n].append(rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            status = "NOT RUN"
        elif all(r == "passed" for r in results):
            status = "PASS"
        elif any(r == "failed" for r in results):
            status = "FAIL"
        else:
            status = "SKIPPED"
        terminalreporter.write_line(f"criterion {n:2d} [{status}] {title}")
        for line in _notes.get(n, ()):
            terminalreporter.write_line(f"      {line}")
