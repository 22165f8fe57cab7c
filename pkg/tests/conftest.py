"""Shared, session-scoped simulation runs.

The standard m-sweep and the a = 2 companion run are the expensive part of
the suite, so they run once, in parallel, and are reused by every module.
"""

from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from pmelab.limit_oracle import barenblatt
from pmelab.model import ProblemSpec, standard_case
from pmelab.pme_solver import _simulate_task, simulate

BARENBLATT_T0 = 0.1
BARENBLATT_C = 1 / 12


def barenblatt_spec(n: int) -> ProblemSpec:
    """u_t = (u^2)_xx started from the self-similar profile at t0 = 0.1, run to t = 1."""
    return ProblemSpec(
        L=1.5, T=1.0 - BARENBLATT_T0, a="1", b="1", phi="0",
        u0="0.1^(-1/3)*max(0, 1/12 - x^2/12*0.1^(-2/3))",
        lam=1.0, p_M=1.0, Lambda=1.0, tilde_lambda=1.0, m_list=(2,), n=n, snapshots=9,
    )


def barenblatt_error(n: int) -> float:
    spec = barenblatt_spec(n)
    tr = simulate(spec, 2.0)
    exact = barenblatt(spec.grid.centers, 1.0, 2.0, 1, BARENBLATT_C)
    return float(np.sum(np.abs(tr.final.u - exact)) / np.sum(exact))


@pytest.fixture(scope="session")
def barenblatt_errors():
    return {n: barenblatt_error(n) for n in (128, 256)}


@pytest.fixture(scope="session")
def _runs():
    std = standard_case()
    tasks = [(std, float(m)) for m in std.m_list] + [(standard_case(a="2"), 80.0)]
    with ProcessPoolExecutor(max_workers=len(tasks)) as pool:
        out = list(pool.map(_simulate_task, tasks))
    return {m: tr for m, tr in zip(std.m_list, out)}, out[-1]


@pytest.fixture(scope="session")
def standard_runs(_runs):
    """m -> Trajectory for the standard growth case at m in {10, 20, 40, 80}."""
    return _runs[0]


@pytest.fixture(scope="session")
def a2_run(_runs):
    """The standard case with a = 2 at m = 80."""
    return _runs[1]


# ------------------------------------------------------------ acceptance report

_ACCEPTANCE: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
