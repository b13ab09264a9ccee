"""Shared fixtures: the unicycle demo and its end-to-end solves.

The solves use the raw sampled maxima of the uncertainty bounds (safety
factor 1.0) with the demo obstacles, input box and ``Q_max``.  They are
session-scoped because each costs between a fraction of a second (``lemma4``)
and tens of seconds (``lemma5`` with ``N = 40``).
"""

import numpy as np
import pytest

from funnelsyn.config import RunConfig
from funnelsyn.model import build_unicycle_demo
from funnelsyn.pipeline import synthesize

RAW_BOUNDS = {"sampling": {"safety_gamma": 1.0, "safety_beta": 1.0}}


def raw_bounds_config(**changes):
    return RunConfig.from_dict(RAW_BOUNDS).replace(**changes)


@pytest.fixture(scope="session")
def demo():
    return build_unicycle_demo()


@pytest.fixture(scope="session")
def solved_l4():
    res = synthesize(raw_bounds_config(mode="lemma4"))
    assert res.optimal, res.report.stats
    return res


@pytest.fixture(scope="session")
def solved_l5():
    res = synthesize(raw_bounds_config(mode="lemma5"))
    assert res.optimal, res.report.stats
    return res


@pytest.fixture(scope="session")
def solved_l5_2n():
    res = synthesize(raw_bounds_config(mode="lemma5", grid={"N": 40}))
    assert res.optimal, res.report.stats
    return res


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
