import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from enlarge_sim.errors import DomainError, ModelError
from enlarge_sim.levy_sim import LevyModel, simulate_batch, simulate_path
from enlarge_sim import rng
from enlarge_sim.random_time import (AbsolutelyContinuous, HazardSpec, SingularContinuous, cantor_function,
                                     cantor_set_distance, draw_random_time, draw_random_times, hazard_value,
                                     stochastic_exponential_of_minus_M, TAU_TOL)

HOLDER = np.log(2) / np.log(3)
HOLDER_TOL = 2 * (1e-16) ** HOLDER


@pytest.mark.parametrize("x, expected", [(0.0, 0.0), (1.0, 1.0), (1 / 3, 0.5), (2 / 3, 0.5), (0.5, 0.5),
                                         (1 / 4, 1 / 3), (3 / 4, 2 / 3), (1 / 9, 0.25), (-1.0, 0.0), (2.0, 1.0)])
def test_cantor_known_values(x, expected):
    # C is Hoelder with exponent log 2 / log 3, so float rounding of x moves C by up to ~1e-11
    assert cantor_function(x) == pytest.approx(expected, abs=HOLDER_TOL)


@given(st.floats(0.0, 1.0))
def test_cantor_self_similarity(x):
    assert cantor_function(x / 3) == pytest.approx(cantor_function(x) / 2, abs=HOLDER_TOL)
    assert cantor_function(1 - x) == pytest.approx(1 - cantor_function(x), abs=HOLDER_TOL)


@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=30))
def test_cantor_monotone(xs):
    xs = np.sort(xs)
    assert np.all(np.diff(cantor_function(xs)) >= 0)


def test_cantor_rejects_nan():
    with pytest.raises(DomainError):
        cantor_function(np.nan)


@pytest.mark.parametrize("x, d", [(0.0, 0.0), (1 / 3, 0.0), (0.5, 1 / 6), (0.4, 1 / 15), (0.25, 0.0)])
def test_cantor_set_distance(x, d):
    assert cantor_set_distance(x) == pytest.approx(d, abs=1e-12)


@pytest.mark.parametrize("kwargs, exc", [(dict(rate=-1.0), ModelError)])
def test_rate_validation(kwargs, exc):
    with pytest.raises(exc):
        AbsolutelyContinuous(**kwargs)


@pytest.mark.parametrize("args", [(0.0, 1.0), (1.0, 0.0), (np.inf, 1.0)])
def test_staircase_validation(args):
    with pytest.raises(ModelError):
        SingularContinuous(*args)


def test_hazard_kind():
    assert HazardSpec.constant(1.0).kind == "absolutely_continuous"
    assert HazardSpec.staircase(2.0).kind == "singular_continuous"
    mixed = HazardSpec.mixed((AbsolutelyContinuous(1.0), SingularContinuous(2.0)))
    assert mixed.kind == "mixed"


def test_hazard_value_mixed():
    path = simulate_path(LevyModel(), 1.0, 64, 0)
    spec = HazardSpec.mixed((AbsolutelyContinuous(0.5), SingularContinuous(2.0, 0.5)))
    # C(0.25 / 0.5) = C(1/2) = 1/2
    assert hazard_value(spec, path, 0.25) == pytest.approx(0.125 + 1.0)
    assert hazard_value(spec, path, 1.0) == pytest.approx(0.5 + 2.0)


def test_path_dependent_rate_integrates_along_path():
    path = simulate_path(LevyModel(), 1.0, 512, 3)
    spec = HazardSpec((AbsolutelyContinuous(lambda t, l: l ** 2, "square"),))
    expected = np.trapezoid(path.l_values ** 2, path.grid)
    assert hazard_value(spec, path, 1.0) == pytest.approx(expected)


def test_tau_solves_first_passage():
    batch = simulate_batch(LevyModel(), 1.0, 128, 500, 4)
    spec = HazardSpec.mixed((AbsolutelyContinuous(0.7), SingularContinuous(1.5, 0.8)))
    sc = draw_random_times(spec, batch)
    d = sc.defaulted
    assert d.any() and (~d).any()
    gamma_tau = 0.7 * sc.tau[d] + 1.5 * cantor_function(np.minimum(sc.tau[d] / 0.8, 1.0))
    # tau is bracketed to TAU_TOL; the staircase turns that into a Hoelder-sized error in Gamma
    np.testing.assert_allclose(gamma_tau, sc.theta[d], rtol=0, atol=0.7 * TAU_TOL + 2 * 1.5 * (TAU_TOL / 0.8) ** HOLDER)
    assert np.all(sc.tau[~d] == 2.0)
    assert np.all(sc.theta[~d] > 0.7 + 1.5)


def test_singular_tau_lies_on_the_cantor_set():
    batch = simulate_batch(LevyModel(), 1.0, 64, 2000, 5)
    sc = draw_random_times(HazardSpec.staircase(5.0), batch)
    assert np.max(cantor_set_distance(sc.tau[sc.defaulted])) < 1e-9


def test_constant_hazard_survival_law():
    batch = simulate_batch(LevyModel(), 1.0, 16, 20_000, 6)
    sc = draw_random_times(HazardSpec.constant(1.3), batch)
    # tau is Exp(1.3) censored at the horizon
    res = stats.kstest(sc.tau[sc.defaulted], stats.truncexpon(b=1.3, scale=1 / 1.3).cdf)
    assert res.pvalue > 1e-4
    assert sc.defaulted.mean() == pytest.approx(1 - np.exp(-1.3), abs=4 * np.sqrt(0.25 / 20_000))


def test_batch_row_matches_single_draw():
    batch = simulate_batch(LevyModel(), 1.0, 64, 50, 7)
    spec = HazardSpec.constant(2.0)
    sc = draw_random_times(spec, batch)
    one = draw_random_time(spec, batch.path(13), rng.derive_seed(7, rng.THETA, 13))
    assert one.tau == sc.tau[13]
    np.testing.assert_array_equal(one.m_values, sc.m_at(np.arange(65))[13])


def test_doleans_dade_matches_closed_form():
    batch = simulate_batch(LevyModel(), 1.0, 64, 300, 8)
    sc = draw_random_times(HazardSpec.constant(2.0), batch)
    y = stochastic_exponential_of_minus_M(sc)
    np.testing.assert_allclose(y, sc.y_at(np.arange(65)), rtol=1e-12)


def test_subset_matches_rows():
    batch = simulate_batch(LevyModel(0.0, 1.0, ((0.5, 3.0),)), 1.0, 32, 40, 9)
    sc = draw_random_times(HazardSpec.constant(1.0), batch)
    sub = sc.subset(10, 25)
    np.testing.assert_array_equal(sub.batch.l_values, batch.l_values[10:25])
    np.testing.assert_array_equal(sub.m_at(np.arange(33)), sc.m_at(np.arange(33))[10:25])
