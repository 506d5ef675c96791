import json
from pathlib import Path

import pytest

from acceptance_log import RESULTS
from nodebias.model import Network

FIXTURES = Path(__file__).parent / "fixtures"


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def threshold_net():
    """One input; label 1 iff x > 0 (logits are (0, x), ties go to class 0)."""
    return Network.from_arrays([[[0.0], [1.0]]], [[0.0, 0.0]])


def random_net(rng, n_in, hidden, n_out=2, scale=1.0):
    return Network.from_arrays(
        [rng.normal(scale=scale, size=(hidden, n_in)), rng.normal(scale=scale, size=(n_out, hidden))],
        [rng.normal(scale=scale, size=hidden), rng.normal(scale=scale, size=n_out)],
    )


@pytest.fixture
def hand_net_fixture():
    return json.loads((FIXTURES / "net_2_2_2.json").read_text())
