"""The numba kernels and their numpy fallbacks must agree bit for bit."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from enlarge_sim import kernels
from enlarge_sim._accel import HAVE_NUMBA

pytestmark = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")

unit = arrays(np.float64, st.integers(1, 40), elements=st.floats(-0.5, 1.5, allow_nan=False))


@given(unit, st.integers(1, 60))
def test_cantor_backends_agree(x, depth):
    np.testing.assert_array_equal(kernels.cantor_numpy(x, depth), kernels.cantor_numba(x, depth))


@given(unit, st.integers(1, 40))
def test_cantor_distance_backends_agree(x, depth):
    np.testing.assert_array_equal(kernels.cantor_distance_numpy(x, depth), kernels.cantor_distance_numba(x, depth))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.0, 3.0), st.floats(0.1, 4.0))
def test_first_passage_backends_agree(seed, rate, kappa):
    g = np.random.default_rng(seed)
    grid = np.linspace(0.0, 1.0, 65)
    ac = (rate * grid)[None, :]
    kappas, smaxs = np.array([kappa]), np.array([0.8])
    total = ac + kappa * kernels.cantor_numpy(np.minimum(grid / 0.8, 1.0), 48)[None, :]
    theta = g.standard_exponential(50)
    a = kernels.first_passage_numpy(grid, ac, total, theta, kappas, smaxs, 48, 1e-12)
    b = kernels.first_passage_numba(grid, ac, total, theta, kappas, smaxs, 48, 1e-12)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32))
def test_jump_cumsum_backends_agree(seed):
    g = np.random.default_rng(seed)
    n, m = 7, 30
    grid = np.linspace(0.0, 1.0, 17)
    path = np.sort(g.integers(0, n, m))
    time = g.uniform(0.0, 1.0, m)
    order = np.lexsort((time, path))
    args = (n, grid, path[order], time[order], g.standard_normal(m)[order])
    np.testing.assert_array_equal(kernels.jump_cumsum_numpy(*args), kernels.jump_cumsum_numba(*args))


def test_env_flag_selects_numpy(monkeypatch):
    import importlib
    from enlarge_sim import _accel

    monkeypatch.setenv("ENLARGE_SIM_DISABLE_NUMBA", "1")
    try:
        importlib.reload(_accel)
        reloaded = importlib.reload(kernels)
        assert reloaded.BACKEND == "numpy"
        assert reloaded.cantor is reloaded.cantor_numpy
    finally:
        monkeypatch.delenv("ENLARGE_SIM_DISABLE_NUMBA")
        importlib.reload(_accel)
        importlib.reload(kernels)


def test_benchmark_cases_agree():
    import sys
    from pathlib import Path

    sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "benchmarks"))
    try:
        import bench_kernels
    finally:
        sys.path.pop(0)
    for name, (args, f_np, f_nb) in bench_kernels.cases(2000).items():
        a, b = f_np(*args), f_nb(*args)
        for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_array_equal(x, y, err_msg=name)
