import numpy as np
import pytest

from rwplab.cs_space import make_space


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def small_spaces():
    """One instance of every model, small enough for brute-force oracles."""
    return [
        make_space("l1", N=12, K=3),
        make_space("weighted", weights=[0.5, 1.0, 1.5, 2.0, 0.7, 1.2, 0.9, 1.1], K=3),
        make_space("block", N=12, block_size=3, K=2),
        make_space("tv", N=10, K=2),
        make_space("tv", grid=(3, 4), K=3),
        make_space("nuclear", shape=(4, 5), K=2),
    ]


def space_id(space):
    return f"{space.model}-{space.ambient_dim}"


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import REPORT

    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
