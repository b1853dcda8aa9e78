"""Shared fixtures and the opt-in marker for long training runs."""

from pathlib import Path

import pytest

from grammar_core.extraction import ActOutcome
from grammar_core.symbols import SymbolTable

REPO_ROOT = Path(__file__).resolve().parent.parent
GRAMMAR_DIR = REPO_ROOT / "grammars"


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False,
                     help="run the full training acceptance runs")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-length training runs, enabled with --run-slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def corridor_symbols():
    return SymbolTable(tuple(f"s{i}" for i in range(1, 7)), tuple(f"g{j}" for j in range(7)), "s0")


@pytest.fixture
def corridor_outcomes():
    """What an optimal controller does in the deterministic corridor."""
    table = {}
    for i in range(1, 7):
        for j in range(7):
            outcome = ActOutcome.terminates() if j == 0 else ActOutcome.reaches(f"s{j}")
            table[(f"s{i}", f"g{j}")] = outcome
    return table


@pytest.fixture
def grammar_dir():
    return GRAMMAR_DIR
