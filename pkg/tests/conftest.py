import functools
import time

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=200, deadline=None)
settings.load_profile("default")

ACCEPTANCE_RESULTS: dict = {}


@functools.lru_cache(maxsize=None)
def acc_run(name: str, **changes):
    from safeguard import acc

    params = acc.AccParams(**changes) if changes else None
    t0 = time.perf_counter()
    log = acc.run_scenario(name, params)
    return log, time.perf_counter() - t0


@functools.lru_cache(maxsize=None)
def segway_run(name: str):
    from safeguard import segway

    t0 = time.perf_counter()
    log = segway.run_segway_scenario(name)
    return log, time.perf_counter() - t0


@pytest.fixture(scope="session", autouse=True)
def _warm_jit():
    # compile the jitted integrators once so timing checks measure simulation only
    from safeguard import acc, segway

    acc.acc_dynamics(acc.AccParams()).fast_rk4(np.zeros(2), np.zeros((1, 1)), 1e-3)
    segway.segway_dynamics(segway.SegwayCoefficients.published()).fast_rk4(np.zeros(4), np.zeros((1, 1)), 1e-3)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
