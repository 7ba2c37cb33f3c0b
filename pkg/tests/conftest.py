"""Shared fixtures and the session-wide rank bound on every latent solve."""

import logging

import numpy as np
import pytest

import latent_ot.lot as lot_module
from latent_ot.analysis import compose_plan, transport_rank

# every solve of the test run: (kx, ky, rank)
RANK_LOG = {"solves": 0, "violations": []}

_original_run = lot_module._run


def _recording_run(*args, **kwargs):
    zx, sols = _original_run(*args, **kwargs)
    for sol in sols:
        P = compose_plan(sol).values
        bound = min(sol.plans.kx, sol.plans.ky)
        rank = transport_rank(P)
        RANK_LOG["solves"] += 1
        if rank > bound:
            RANK_LOG["violations"].append((sol.plans.kx, sol.plans.ky, rank))
    return zx, sols


def pytest_configure(config):
    lot_module._run = _recording_run
    logging.getLogger("latent_ot").setLevel(logging.ERROR)


def pytest_sessionfinish(session, exitstatus):
    if RANK_LOG["violations"]:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter):
    v = RANK_LOG["violations"]
    status = "PASS" if not v else "FAIL"
    terminalreporter.write_line(
        f"[criterion 4] {status}: composed-plan rank <= min(kx, ky) on all {RANK_LOG['solves']} solves"
        + (f"; violations {v[:5]}" if v else "")
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
