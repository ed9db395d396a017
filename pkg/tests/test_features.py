import numpy as np
import pytest
from hypothesis import given, strategies as st

from enlarge_sim.errors import ConfigurationError, DomainError
from enlarge_sim.features import CellState, FeatureSet, bounded_function, feature_set, payoff


def make_state(t=0.25, n=6, seed=0):
    g = np.random.default_rng(seed)
    L = g.standard_normal(n)
    tau = np.array([0.1, 0.3, 0.5, 2.0, 0.2, 2.0])[:n]
    H = (tau <= t).astype(float)
    gamma = 0.7 * t
    return CellState(t, L, L / np.sqrt(max(t, 1e-12)), H, np.exp(-gamma), np.where(H > 0, 0.7 * tau, gamma),
                     tau, gamma)


def test_hermite_recurrence():
    st_ = make_state()
    z = st_.z
    F = FeatureSet(("He0", "He1", "He2", "He3")).evaluate(st_)
    np.testing.assert_allclose(F, np.stack([np.ones_like(z), z, z ** 2 - 1, z ** 3 - 3 * z], axis=1))


def test_products_and_survival_at():
    st_ = make_state(t=0.4)
    F = FeatureSet(("L*1-H", "1-H[0.25]", "expGamma[0.25]", "expGamma[0.5]")).evaluate(st_)
    np.testing.assert_allclose(F[:, 0], st_.L * (1 - st_.H))
    np.testing.assert_array_equal(F[:, 1], (st_.tau > 0.25).astype(float))
    np.testing.assert_array_equal(F[:, 2], 1.0)
    np.testing.assert_allclose(F[:, 3], np.exp(0.7 * 0.4))


@pytest.mark.parametrize("names, uses", [(("1", "L", "He3"), False), (("1", "1-H"), True),
                                         (("He2*1-H[0.5]",), True), (("Lambda",), True), (("A", "expGamma"), False)])
def test_uses_random_time(names, uses):
    assert FeatureSet(names).uses_random_time is uses


@pytest.mark.parametrize("names", [(), ("1", "1"), ("cosL",), ("He1*foo",)])
def test_feature_validation(names):
    with pytest.raises(ConfigurationError):
        FeatureSet(names)


def test_named_sets():
    assert feature_set("survival").names == ("1", "A", "1-H", "1-H*expGamma")
    assert len(feature_set("hermite_survival", degree=3, s=0.5)) == 4
    with pytest.raises(ConfigurationError):
        feature_set("nope")


@given(st.floats(-10, 10), st.floats(0.1, 5))
def test_clip_is_bounded(x, k):
    g = bounded_function("clip", level=k)
    assert abs(g(x)) <= g.bound


def test_identity_is_unbounded_and_clip_level_positive():
    assert not np.isfinite(bounded_function("identity").bound)
    with pytest.raises(DomainError):
        bounded_function("clip", level=0.0)


def test_payoffs():
    term = {"L": np.array([-3.0, 0.5, 3.0]), "W": np.zeros(3), "H": np.array([1.0, 0.0, 0.0]),
            "M": np.zeros(3), "tau": np.array([0.2, 2.0, 0.7])}
    p = payoff("clipped_L_survival", level=2.0, s=0.5)
    np.testing.assert_array_equal(p(term), [0.0, 0.5, 2.0])
    assert p.label == "clipped_L_survival(level=2.0,s=0.5)"
    np.testing.assert_array_equal(payoff("H_T")(term), term["H"])
    with pytest.raises(ConfigurationError):
        payoff("clipped_L_survival")
    with pytest.raises(ConfigurationError):
        payoff("digital")
