import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from impmpm.scenes import soft_block  # noqa: E402
from impmpm.stepper import iter_multipliers, run_simulation  # noqa: E402

CRITERIA = {
    1: "large-step stability frontier (soft block)",
    2: "time-step robustness of drift",
    3: "Newmark free-fall exactness",
    4: "linear-oscillator amplification oracle",
    5: "JVP fidelity",
    6: "GMRES correctness",
    7: "Newton contract and solver ablations",
    8: "metric oracles",
    9: "conservation",
    10: "impulse consistency across k",
    11: "particle filling",
}

_status: dict[int, bool] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion this test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = int(marker.args[0])
    ok = rep.passed if rep.when == "call" else not (rep.failed or rep.skipped)
    _status[n] = _status.get(n, True) and ok


def pytest_terminal_summary(terminalreporter):
    if not _status:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        if n in _status:
            word = "PASS" if _status[n] else "FAIL"
            terminalreporter.write_line(f"criterion {n:2d}: {word}  {CRITERIA[n]}")


SWEEP_FRAMES = 20


@pytest.fixture(scope="session")
def soft_sweep():
    """Both integrators over the full multiplier list on the soft-block scene."""
    cfg = soft_block(frame_num=SWEEP_FRAMES)
    t0 = time.perf_counter()
    traces = {m: {k: run_simulation(cfg, m, k) for k in iter_multipliers()} for m in ("implicit", "explicit")}
    return {"config": cfg, "traces": traces, "wall_time": time.perf_counter() - t0}
