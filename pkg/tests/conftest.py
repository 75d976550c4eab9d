"""Shared fixtures: grids, the unstable eigenpair, the inner operator and the desk-scale gluing runs."""

from __future__ import annotations

import time

import numpy as np
import pytest

from critheat.grid import tan_grid
from critheat.inner import WeightSpec, build_inner_operator
from critheat.modulation import BubbleTrajectory, mu_star, time_grid

T_DEFAULT = 0.05
ZQ = -0.1

_ACCEPTANCE: dict = {}
_TIMINGS: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    _ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} | {detail}")
    if _TIMINGS:
        terminalreporter.write_line("fixture timings (s): " + ", ".join(f"{k}={v:.1f}" for k, v in _TIMINGS.items()))


@pytest.fixture(scope="session")
def grid400():
    return tan_grid(400)


@pytest.fixture(scope="session")
def eigenpair():
    from critheat.spectrum import solve_eigenpair

    return solve_eigenpair()


@pytest.fixture(scope="session")
def weights():
    return WeightSpec()


@pytest.fixture(scope="session")
def inner_op(weights):
    return build_inner_operator(weights.R)


@pytest.fixture(scope="session")
def inner_traj():
    t = time_grid(T_DEFAULT, layer_scale=mu_star(0.0, T_DEFAULT, ZQ) ** 2)
    return BubbleTrajectory.leading(t, T_DEFAULT, ZQ)


def _timed_run(name, cfg):
    from critheat.gluing import run_gluing

    t0 = time.perf_counter()
    res = run_gluing(cfg)
    _TIMINGS[name] = time.perf_counter() - t0
    return res


@pytest.fixture(scope="session")
def gluing_run():
    from critheat.gluing import GluingConfig

    return _timed_run("glue", GluingConfig())


@pytest.fixture(scope="session")
def gluing_run_fine():
    from critheat.gluing import GluingConfig

    return _timed_run("glue_eps_div10", GluingConfig(eps_frac=1e-5))


@pytest.fixture(scope="session")
def timings():
    return _TIMINGS


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
