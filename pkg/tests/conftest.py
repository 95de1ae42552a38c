import numpy as np
import pytest
import torch

from cacunet.data import SynthSpec


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion.

    The lines are printed together at the end of the session and also
    returned so the test can assert on the verdict.
    """

    def record(label, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield


@pytest.fixture(scope="session")
def tiny_synth():
    """Short low-rate synthetic corpus, small enough for unit tests."""
    return SynthSpec(n_tracks=4, duration_s=1.0, sample_rate=8000, seed=7, channels=2,
                     n_valid=1, n_test=2)
