import numpy as np
import pytest
from scipy import stats

from enlarge_sim.engine import BatchCellSource, FitRequest, backward_sweep, relative_residual, replay
from enlarge_sim.errors import DomainError, StatisticalPowerError, StructuralError
from enlarge_sim.features import FeatureSet, bounded_function, feature_set, payoff
from enlarge_sim.representation import (OrthonormalBasis, compare_representations, explicit_representation,
                                        regression_representation)

LEVEL = 2.0


def clip_delta(w, tau_left):
    """``d/dx E[clip(x + sqrt(tau_left) N)]`` at ``x = w``: the Brownian integrand of ``clip(W_T)``."""
    sd = np.sqrt(tau_left)
    return stats.norm.cdf((LEVEL - w) / sd) - stats.norm.cdf((-LEVEL - w) / sd)


def test_relative_residual_of_exact_fit():
    xi = np.random.default_rng(0).standard_normal(100)
    assert relative_residual(xi, xi) == (0.0, 0.0)
    r, _ = relative_residual(xi, np.full(100, xi.mean()))
    assert r == pytest.approx(1.0)


def test_brownian_terminal_value_has_unit_integrand(gaussian_scenarios):
    # the level regressions carry O(N^-1/2) sampling error, so the unit integrand is only approximate
    rep = regression_representation(payoff("W_T"), gaussian_scenarios)
    assert rep.residual_rel < 0.02
    z = rep.evaluate(["W"])["W"]
    assert np.max(np.abs(z[:, 1:-1] - 1.0)) < 0.03


def test_martingale_terminal_value_has_unit_m_integrand(gaussian_scenarios):
    rep = regression_representation(payoff("M_T"), gaussian_scenarios)
    assert rep.residual_rel < 0.02
    u = rep.evaluate(["M"])["M"]
    alive = gaussian_scenarios.tau[:, None] > gaussian_scenarios.grid[None, :]
    assert np.mean(np.abs(u[:, :-1][alive[:, :-1]] - 1.0)) < 0.02


def test_clipped_brownian_integrand_matches_closed_form(gaussian_scenarios):
    rep = regression_representation(payoff("clipped_L", level=LEVEL), gaussian_scenarios)
    assert rep.residual_rel < 0.05
    grid = gaussian_scenarios.grid
    z = rep.evaluate(["W"])["W"]
    w = gaussian_scenarios.batch.w
    for k in (0, 64, 128, 192):
        exact = clip_delta(w[:, k], grid[-1] - grid[k])
        assert np.sqrt(np.mean((z[:, k] - exact) ** 2)) < 0.05


def test_explicit_construction_matches_closed_form(gaussian_scenarios):
    s = 0.5
    rep = explicit_representation(bounded_function("clip", level=LEVEL), s, gaussian_scenarios)
    assert rep.residual_rel < 0.05
    grid = gaussian_scenarios.grid
    tau = gaussian_scenarios.tau
    z = rep.evaluate(["W"])["W"]
    w = gaussian_scenarios.batch.w
    for k in (32, 96):
        t = grid[k]
        # Y_t E[clip(W_T) exp(-s) | F_t]' = 1{t < tau} exp(-(s - t)) * delta
        exact = (tau > t) * np.exp(-(s - t)) * clip_delta(w[:, k], 1.0 - t)
        assert np.sqrt(np.mean((z[:, k] - exact) ** 2)) < 0.05


def test_explicit_and_regression_agree(gaussian_scenarios):
    s = 0.5
    exp_rep = explicit_representation(bounded_function("clip", level=LEVEL), s, gaussian_scenarios)
    reg = regression_representation(payoff("clipped_L_survival", level=LEVEL, s=s), gaussian_scenarios)
    agree = compare_representations(exp_rep, reg)
    assert agree.passed


def test_explicit_guards(gaussian_scenarios):
    with pytest.raises(DomainError):
        explicit_representation(bounded_function("identity"), 0.5, gaussian_scenarios)
    with pytest.raises(DomainError):
        explicit_representation(bounded_function("clip"), 0.5001, gaussian_scenarios)
    with pytest.raises(StructuralError):
        explicit_representation(bounded_function("clip"), 0.5, gaussian_scenarios, features=FeatureSet(("1", "1-H")))


def test_power_guard(gaussian_scenarios):
    with pytest.raises(StatisticalPowerError):
        regression_representation(payoff("W_T"), gaussian_scenarios, min_paths=10 ** 6)


def test_payoff_array_shape_checked(gaussian_scenarios):
    with pytest.raises(StructuralError):
        regression_representation(np.zeros(3), gaussian_scenarios)


def test_jump_basis_is_orthonormal(jump_scenarios):
    basis = OrthonormalBasis.canonical(jump_scenarios.batch.model)
    np.testing.assert_allclose(basis.gram(), np.eye(basis.dim), atol=1e-12)


def test_replay_reproduces_in_sample_fit(gaussian_scenarios):
    src = BatchCellSource(gaussian_scenarios)
    xi = payoff("H_T")(src.terminal())
    req = FitRequest(xi, feature_set("survival"), (("M",),))
    fit, = backward_sweep(src, [req], pool=2.0 ** -6).fits
    np.testing.assert_allclose(replay(fit, src), fit.reconstruction, atol=1e-10)


def test_jump_payoff_uses_jump_integrators(jump_scenarios):
    rep = regression_representation(payoff("L_T"), jump_scenarios)
    assert set(rep.names) == {"W", "X1", "X2", "M"}
    assert rep.residual_rel < 0.02
