import os
import sys
from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import settings

os.environ.setdefault("RESUNET_THREADS", "1")
torch.set_num_threads(int(os.environ["RESUNET_THREADS"]))
sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")

from resunet.phantom import PhantomSpec, generate_case  # noqa: E402
from resunet.preprocess import normalize_case  # noqa: E402


@pytest.fixture(scope="session")
def phantom_case():
    return generate_case(PhantomSpec(), 0)


@pytest.fixture(scope="session")
def normalized_case(phantom_case):
    return normalize_case(phantom_case)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_labels(rng, shape, p=(0.55, 0.15, 0.15, 0.15)):
    return rng.choice(np.array([0, 1, 2, 4], dtype=np.uint8), size=shape, p=p)


# -- acceptance reporting ---------------------------------------------------------

_CRITERIA: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the terminal summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _CRITERIA.append((marker.args[0], "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for name, status in _CRITERIA:
            terminalreporter.write_line(f"{status}  {name}")
