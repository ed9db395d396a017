import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from enlarge_sim.errors import DomainError, ModelError, StatisticalPowerError
from enlarge_sim.levy_sim import (LevyModel, characteristic_exponent, simulate_batch, simulate_path, uniform_grid,
                              verify_levy_characterization)

from conftest import JUMP_MODEL


def poisson_mixture_cf(model, u, t, n_max=80):
    """``E exp(i u L_t)`` as a sum over the number of jumps, for models with jumps."""
    rates = model.rates
    lam = rates.sum()
    p = rates / lam
    mark_cf = np.sum(p * np.exp(1j * u * model.sizes))
    n = np.arange(n_max)
    jumps = np.sum(stats.poisson.pmf(n, lam * t) * mark_cf ** n)
    return np.exp(1j * u * model.path_drift * t - 0.5 * model.sigma2 * u * u * t) * jumps


@pytest.mark.parametrize("u", [-2.0, -0.7, 0.0, 0.3, 1.5])
@pytest.mark.parametrize("t", [0.25, 1.0, 2.0])
def test_characteristic_exponent_matches_poisson_sum(u, t):
    assert np.exp(t * characteristic_exponent(JUMP_MODEL, u)) == pytest.approx(poisson_mixture_cf(JUMP_MODEL, u, t),
                                                                               abs=1e-12)


def test_large_jumps_are_not_truncated():
    model = LevyModel(0.0, 0.0, ((3.0, 1.0),))
    assert model.path_drift == 0.0
    assert np.exp(characteristic_exponent(model, 0.4)) == pytest.approx(poisson_mixture_cf(model, 0.4, 1.0))


def test_gaussian_exponent():
    assert characteristic_exponent(LevyModel(0.2, 2.0), 1.5) == pytest.approx(1j * 0.3 - 2.25)


@pytest.mark.parametrize("kwargs", [dict(sigma2=-1.0), dict(nu=((0.0, 1.0),)), dict(nu=((1.0, -1.0),)),
                                    dict(nu=((1.0, 1.0), (1.0, 2.0))), dict(beta=np.inf)])
def test_model_validation(kwargs):
    with pytest.raises(ModelError):
        LevyModel(**kwargs)


def test_uniform_grid_is_exact_dyadic():
    g = uniform_grid(1.0, 1024)
    assert g[512] == 0.5 and g[-1] == 1.0


def test_batch_row_matches_single_path():
    batch = simulate_batch(JUMP_MODEL, 1.0, 64, 40, 3)
    for i in (0, 17, 39):
        single = simulate_path(JUMP_MODEL, 1.0, 64, int(batch.seeds[i]))
        np.testing.assert_array_equal(batch.l_values[i], single.l_values)


def test_batch_independent_of_workers_and_chunks():
    a = simulate_batch(JUMP_MODEL, 1.0, 32, 100, 9, workers=1, chunk=7)
    b = simulate_batch(JUMP_MODEL, 1.0, 32, 100, 9, workers=3, chunk=50)
    np.testing.assert_array_equal(a.l_values, b.l_values)
    np.testing.assert_array_equal(a.ledger.time, b.ledger.time)


def test_ledger_is_sorted_and_on_the_path():
    batch = simulate_batch(JUMP_MODEL, 1.0, 32, 200, 4)
    led = batch.ledger
    key = led.path * 10.0 + led.time
    assert np.all(np.diff(key) >= 0)
    assert np.all((led.time > 0) & (led.time <= 1.0))
    np.testing.assert_array_equal(led.size, JUMP_MODEL.sizes[led.mark])


def test_sample_moments():
    batch = simulate_batch(JUMP_MODEL, 1.0, 16, 40_000, 5)
    lt = batch.l_values[:, -1]
    n = lt.size
    assert abs(lt.mean() - JUMP_MODEL.mean_rate) < 4 * np.sqrt(JUMP_MODEL.variance_rate / n)
    assert lt.var() == pytest.approx(JUMP_MODEL.variance_rate, rel=0.05)


@settings(max_examples=20)
@given(st.floats(-1, 1), st.floats(0.0, 2.0), st.integers(0, 2**32))
def test_path_starts_at_zero_and_is_seed_deterministic(beta, sigma2, seed):
    model = LevyModel(beta, sigma2, ((0.5, 2.0),))
    a = simulate_path(model, 2.0, 8, seed)
    b = simulate_path(model, 2.0, 8, seed)
    assert a.l_values[0] == 0.0 and a.grid[-1] == 2.0
    np.testing.assert_array_equal(a.l_values, b.l_values)


def test_characterization_detects_a_wrong_drift():
    batch = simulate_batch(JUMP_MODEL, 1.0, 64, 20_000, 6)
    good = verify_levy_characterization(batch, JUMP_MODEL, [-1.0, 1.0], [0.5, 1.0])
    bad = verify_levy_characterization(batch, LevyModel(1.1, 1.0, JUMP_MODEL.nu), [-1.0, 1.0], [0.5, 1.0])
    assert good.passed
    assert not bad.passed


def test_characterization_requires_power():
    batch = simulate_batch(JUMP_MODEL, 1.0, 8, 100, 6)
    with pytest.raises(StatisticalPowerError):
        verify_levy_characterization(batch, JUMP_MODEL, [1.0], [1.0])


def test_nonfinite_frequency():
    with pytest.raises(DomainError):
        characteristic_exponent(JUMP_MODEL, np.nan)
