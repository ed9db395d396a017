import numpy as np
import pytest

from enlarge_sim.diagnostics import (azema_crosscheck, bracket_check, co_jump_audit, enlargement_identities,
                                     martingale_increment_test, orthogonality_check, post_default_levy_check,
                                     process_at)
from enlarge_sim.errors import ConfigurationError, DomainError, StatisticalPowerError
from enlarge_sim.levy_sim import LevyModel, simulate_batch
from enlarge_sim.random_time import HazardSpec, draw_random_times

from conftest import JUMP_MODEL

TIMES = [0.0, 0.25, 0.5, 0.75, 1.0]


def test_identities_hold_to_rounding(jump_scenarios):
    rep = enlargement_identities(jump_scenarios)
    assert rep.passed
    assert max(rep.errors.values()) < 1e-12


def test_identities_detect_a_tampered_compensator(jump_scenarios):
    bad = draw_random_times(jump_scenarios.spec, jump_scenarios.batch)
    bad.gamma_tau = bad.gamma_tau * (1 + 1e-6)
    assert not enlargement_identities(bad).passed


@pytest.mark.parametrize("process", ["M", "W", "X1", "X2", "ReZ[1.0]", "ImZ[0.5]"])
def test_family_members_are_martingales(jump_scenarios, process):
    assert martingale_increment_test(process, jump_scenarios, TIMES).passed


def test_uncompensated_default_indicator_is_rejected(jump_scenarios):
    rep = martingale_increment_test("H", jump_scenarios, TIMES)
    assert rep.max_abs_z > 10


def test_martingale_test_validation(jump_scenarios):
    with pytest.raises(ConfigurationError):
        martingale_increment_test("M", jump_scenarios, TIMES, test_functions=("exp(L)",))
    with pytest.raises(DomainError):
        martingale_increment_test("M", jump_scenarios, [0.5, 0.25])
    with pytest.raises(ConfigurationError):
        process_at(jump_scenarios, "X9", [0])


def test_compensated_jump_process_values(jump_scenarios):
    # X1 is (N^{x=1}_t - 0.5 t) / sqrt(0.5)
    x1 = process_at(jump_scenarios, "X1", [256])[:, 0]
    led = jump_scenarios.batch.ledger
    counts = np.bincount(led.path[led.size == 1.0], minlength=jump_scenarios.n_paths)
    np.testing.assert_allclose(x1, (counts - 0.5) / np.sqrt(0.5), atol=1e-12)


def test_azema_crosscheck_agrees_with_closed_form():
    spec = HazardSpec.mixed((HazardSpec.constant(0.5).components[0], HazardSpec.staircase(1.0).components[0]))
    rep = azema_crosscheck(spec, JUMP_MODEL, n_outer=5, n_inner=4000, n_steps=256)
    assert rep.passed
    np.testing.assert_allclose(rep.closed_form[:, -1], np.exp(-1.5))


def test_azema_rejects_off_grid_times():
    with pytest.raises(DomainError):
        azema_crosscheck(HazardSpec.constant(1.0), JUMP_MODEL, 1, 10, n_steps=4, times=(0.3,))


def test_bracket_identities(jump_scenarios):
    rep = bracket_check(jump_scenarios)
    assert rep.max_abs_qv_error == 0.0
    assert rep.passed


def test_orthogonality(jump_scenarios):
    rep = orthogonality_check(jump_scenarios)
    assert {p for p in rep.pairs} >= {("W", "M"), ("X1", "X2"), ("X2", "M")}
    assert rep.passed


def test_no_co_jumps(jump_scenarios):
    rep = co_jump_audit(jump_scenarios)
    assert rep.n_defaults > 0 and rep.n_jumps > 0
    assert rep.co_jumps == 0 and rep.min_distance > 0


def test_post_default_increments_keep_levy_law(jump_scenarios):
    assert post_default_levy_check(jump_scenarios, [0.5, 1.0, 2.0], 0.5).passed


def test_post_default_needs_defaults():
    batch = simulate_batch(LevyModel(), 1.0, 16, 200, 1)
    sc = draw_random_times(HazardSpec.constant(0.01), batch)
    with pytest.raises(StatisticalPowerError):
        post_default_levy_check(sc, [1.0], 0.5)


def test_chunking_does_not_change_results(jump_scenarios):
    sub = jump_scenarios.subset(0, 300)
    assert enlargement_identities(sub, chunk=7).errors == enlargement_identities(sub, chunk=300).errors
    assert bracket_check(sub, chunk=11) == bracket_check(sub, chunk=300)
