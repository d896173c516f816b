"""Shared fixtures plus the acceptance summary hook.

Acceptance tests record one labeled result each; after the run the
terminal summary prints one ACCEPTANCE line per label so the pass/fail
status of every criterion is visible at a glance.
"""

from pathlib import Path

import pytest

from mds.runner import check_law_dir

REPO_ROOT = Path(__file__).resolve().parent.parent
LAW_DIR = REPO_ROOT / "laws"
SCENARIO_DIR = REPO_ROOT / "scenarios"
VIOLATION_DIR = Path(__file__).resolve().parent / "data" / "violations"

_ACCEPTANCE_RESULTS: list = []


class _AcceptanceCheck:
    """Record a labeled verdict, then enforce it."""

    def __call__(self, label: str, ok: bool, detail: str = ""):
        _ACCEPTANCE_RESULTS.append((label, bool(ok), detail))
        assert ok, f"{label}: {detail or 'check failed'}"


@pytest.fixture
def acceptance():
    return _AcceptanceCheck()


@pytest.fixture(scope="session")
def law_dir() -> Path:
    return LAW_DIR


@pytest.fixture(scope="session")
def scenario_dir() -> Path:
    return SCENARIO_DIR


@pytest.fixture(scope="session")
def violation_dir() -> Path:
    return VIOLATION_DIR


@pytest.fixture(scope="session")
def shipped():
    """The shipped law hierarchy, built once per test session."""
    h, problems = check_law_dir(LAW_DIR)
    assert h is not None, problems
    return h


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance")
    for label, ok, detail in _ACCEPTANCE_RESULTS:
        line = f"ACCEPTANCE: {label}: {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
