import numpy as np
import pytest
from hypothesis import settings

from enlarge_sim.levy_sim import LevyModel, simulate_batch
from enlarge_sim.random_time import HazardSpec, draw_random_times

# numba compiles on first call, which would trip per-example deadlines
settings.register_profile("default", deadline=None)
settings.load_profile("default")

JUMP_MODEL = LevyModel(0.1, 1.0, ((1.0, 0.5), (-0.5, 1.0)))


@pytest.fixture(scope="session")
def gaussian_scenarios():
    batch = simulate_batch(LevyModel(0.0, 1.0), 1.0, 256, 20_000, 11)
    return draw_random_times(HazardSpec.constant(1.0), batch)


@pytest.fixture(scope="session")
def jump_scenarios():
    batch = simulate_batch(JUMP_MODEL, 1.0, 256, 20_000, 12)
    spec = HazardSpec.mixed((HazardSpec.constant(0.5).components[0],
                             HazardSpec.staircase(1.0).components[0]))
    return draw_random_times(spec, batch)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


#: criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'} | {detail}")
