import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from enlarge_sim.engine import FitRequest, _solve, backward_sweep
from enlarge_sim.errors import ConfigurationError
from enlarge_sim.features import CellState, FeatureSet

ONE = FeatureSet(("1",))
SPAN = FeatureSet(("1", "L"))


class ToySource:
    """Four cells with a Brownian member ``W`` and a rare-jump member ``J``.

    ``L`` in the cell state is the martingale ``sum_{j<k} a_j dW_j + b_j dJ_j``
    so that the features ``1, L`` span the conditional expectations exactly.
    """

    members = ("W", "J")

    def __init__(self, a=(0, 0, 0, 0), b=(0, 0, 0, 0), n=4000, seed=0, rate=3.0, events=None):
        g = np.random.default_rng(seed)
        self.grid = np.linspace(0.0, 1.0, 5)
        self.n_paths = n
        dt = 0.25
        self.dw = g.standard_normal((n, 4)) * np.sqrt(dt)
        jumps = g.poisson(rate * dt, (n, 4))
        self.dj = jumps - rate * dt
        self.events = jumps.sum(axis=0) if events is None else np.asarray(events)
        steps = self.dw * np.asarray(a, float) + self.dj * np.asarray(b, float)
        self.xi = steps.sum(axis=1)
        self.running = np.concatenate([np.zeros((n, 1)), np.cumsum(steps, axis=1)], axis=1)

    def terminal(self):
        return {}

    def cells(self):
        for k in range(3, -1, -1):
            z = np.zeros(self.n_paths)
            L = self.running[:, k]
            state = CellState(self.grid[k], L, L, z, np.ones(1), z, z, np.zeros(1),
                              {"events": {"J": float(self.events[k])}})
            yield k, state, {"W": self.dw[:, k], "J": self.dj[:, k]}


@settings(max_examples=40)
@given(st.integers(1, 6), st.integers(0, 2**32))
def test_solve_matches_direct_solution(q, seed):
    g = np.random.default_rng(seed)
    X = g.standard_normal((200, q)) * g.uniform(0.1, 10, q)
    b = g.standard_normal(q)
    c, deficient, _ = _solve(X.T @ X, b, 200, 0.0)
    assert not deficient
    np.testing.assert_allclose(X.T @ X @ c, b, rtol=1e-6, atol=1e-8)


def test_solve_flags_singular_systems():
    X = np.ones((50, 2))
    c, deficient, _ = _solve(X.T @ X, X.T @ np.ones(50), 50, 1e-8)
    assert deficient
    assert np.all(np.isfinite(c))
    assert X[0] @ c == pytest.approx(1.0, rel=1e-6)


def test_deterministic_integrands_recovered():
    # the level projections are in-sample estimates, so recovery holds up to O(N^-1/2)
    a = np.array([1.0, -2.0, 0.5, 3.0])
    b = np.array([0.7, 0.7, -1.0, 2.0])
    src = ToySource(a, b, n=40_000)
    xi = src.xi
    fit, = backward_sweep(src, [FitRequest(xi, SPAN, (("W",), ("J",)))]).fits
    np.testing.assert_allclose(fit.integrand_coefs[:, 0], np.stack([a, 0 * a], axis=1), atol=0.05)
    np.testing.assert_allclose(fit.integrand_coefs[:, 1], np.stack([b, 0 * b], axis=1), atol=0.05)
    assert np.sqrt(np.mean((fit.reconstruction - xi) ** 2)) < 0.05 * xi.std()


def test_pooled_coefficients_are_shared_within_a_bucket():
    src = ToySource(a=(1.0, 1.0, 3.0, 3.0))
    fit, = backward_sweep(src, [FitRequest(src.xi, SPAN, (("W",),))], pool=0.5).fits
    c = fit.integrand_coefs[:, 0, 0]
    assert c[0] == c[1] and c[2] == c[3]
    np.testing.assert_allclose(c, [1.0, 1.0, 3.0, 3.0], atol=0.05)


def test_groups_are_never_pooled_together():
    a = np.array([1.0, 2.0, 3.0, 4.0])
    src = ToySource(a)
    fit, = backward_sweep(src, [FitRequest(src.xi, SPAN, (("W",),))], pool=1.0, groups=np.arange(4)).fits
    np.testing.assert_allclose(fit.integrand_coefs[:, 0, 0], a, atol=0.1)
    assert len(set(fit.integrand_coefs[:, 0, 0])) == 4


def test_block_without_events_takes_the_latest_fit():
    # cell 0 reports no jumps, so its J coefficient may not be estimated from its own increments
    src = ToySource((1, 1, 1, 1), (9.0, 2.0, 2.0, 2.0), events=[0, 50, 50, 50])
    fit, = backward_sweep(src, [FitRequest(src.xi, SPAN, (("W",), ("J",)))]).fits
    c = fit.integrand_coefs[:, 1, 0]
    np.testing.assert_array_equal(fit.integrand_coefs[0, 1], fit.integrand_coefs[1, 1])
    assert c[1] == pytest.approx(2.0, abs=0.1)


def test_unknown_integrator_rejected():
    with pytest.raises(ConfigurationError):
        backward_sweep(ToySource(n=10), [FitRequest(np.zeros(10), ONE, (("M",),))])


def test_hook_accumulates_linear_functionals():
    src = ToySource(a=(1.0, -2.0, 0.5, 3.0))
    xi = src.xi

    def hook(k, state, inc, levels):
        return [("w", 0, 0, inc["W"])]

    res = backward_sweep(src, [FitRequest(xi, SPAN, (("W",),))], hook=hook)
    fit, = res.fits
    # with a single integrator the hook functional is the stochastic-integral part of the fit
    np.testing.assert_allclose(res.functionals["w"], fit.reconstruction - fit.x0, atol=1e-10)
