import numpy as np
import pytest

from conftest import make_instance, random_market
from market_core import InvariantError, MarketParams, check_assumption2, shape_of
from reward_opt import (
    BASIS_MATRIX,
    DISCRIMINATORY,
    UNIFORM,
    UNIFORM_BOUND,
    UNIFORM_CLAMPED,
    ExpectationProfile,
    average_discriminatory_reward,
    brute_force_discriminatory,
    brute_force_uniform,
    discriminatory_reward,
    incomplete_info_bound,
    jensen_monte_carlo,
    ones_quadratic_inverse,
    realized_bound_reward,
    revenue_at,
    revenue_gradient,
    revenue_hessian,
    solve_regime,
    uniform_bound_reward,
    uniform_reward,
    uniform_reward_clamped,
)
from scenario import ScenarioConfig, expectation_of, generate_random_instance, sample_b

# Penalización cuadrática suave: la recompensa uniforme óptima queda en el interior.
SOFT = MarketParams(c=1.0, mu=1.0, s=4.0, t=0.01)


def test_single_mu_discriminatory_matches_calculus(single_mu):
    sol = discriminatory_reward(single_mu)
    assert sol.regime == DISCRIMINATORY
    assert sol.r[0] == pytest.approx(2 / 3, abs=1e-9)
    assert sol.revenue == pytest.approx(25 / 12, abs=1e-9)
    assert sol.equilibrium.x[0] == pytest.approx(5 / 6, abs=1e-9)
    assert sol.warnings == ()


def test_single_mu_uniform_equals_discriminatory(single_mu):
    sol = uniform_reward(single_mu)
    assert sol.regime == UNIFORM
    assert sol.r[0] == pytest.approx(2 / 3, abs=1e-9)
    assert sol.revenue == pytest.approx(25 / 12, abs=1e-9)


def test_single_mu_grid_search(single_mu):
    assert brute_force_uniform(single_mu, (0.0, 2.0), 200001) == pytest.approx(2 / 3, abs=1e-5)
    grid = brute_force_discriminatory(single_mu, (0.0, 2.0), 20001)
    assert grid[0] == pytest.approx(2 / 3, abs=1e-4)


def test_symmetric_pair_against_grid(two_mu):
    sol = discriminatory_reward(two_mu)
    np.testing.assert_allclose(sol.r, [0.5, 0.5], atol=1e-12)
    assert sol.revenue == pytest.approx(5.0, abs=1e-9)
    grid = brute_force_discriminatory(two_mu, (0.0, 5.0), 501)
    assert np.max(np.abs(grid - sol.r)) <= 0.01 + 1e-9


def test_asymmetric_pair_against_grid():
    inst = make_instance([2.0, 3.0], [1.0, 1.5], [[0.0, 0.4], [0.4, 0.0]])
    sol = discriminatory_reward(inst)
    assert sol.equilibrium.interior
    grid = brute_force_discriminatory(inst, (0.0, 5.0), 501)
    assert np.max(np.abs(grid - sol.r)) <= 0.01 + 1e-9


def test_uniform_closed_form_against_line_search():
    rng = np.random.default_rng(404)
    for _ in range(50):
        inst = random_market(rng, int(rng.integers(1, 21)), params=SOFT)
        sol = uniform_reward(inst)
        center = float(sol.r[0])
        found = brute_force_uniform(inst, (center - 0.5, center + 0.5), 20001)
        assert abs(found - center) <= 1e-4


def test_first_order_conditions_at_optimum():
    rng = np.random.default_rng(8)
    for _ in range(10):
        inst = random_market(rng, 5, params=SOFT)
        disc = discriminatory_reward(inst)
        assert disc.equilibrium.interior
        assert np.max(np.abs(revenue_gradient(inst, disc.r))) <= 1e-4
        uni = uniform_reward(inst)
        assert uni.equilibrium.interior
        assert np.max(np.abs(revenue_gradient(inst, uni.r, uniform=True))) <= 1e-4


def test_discriminatory_dominates_uniform_on_interior_markets():
    rng = np.random.default_rng(21)
    for _ in range(30):
        inst = random_market(rng, int(rng.integers(2, 15)), params=SOFT)
        disc = discriminatory_reward(inst)
        uni = uniform_reward(inst)
        assert disc.equilibrium.interior and uni.equilibrium.interior
        assert disc.revenue >= uni.revenue - 1e-9
        assert np.all(uni.r == uni.r[0])
        assert average_discriminatory_reward(inst) == pytest.approx(disc.mean_reward)


def test_revenue_is_concave_at_optimum():
    rng = np.random.default_rng(13)
    for _ in range(10):
        inst = random_market(rng, int(rng.integers(2, 8)))
        sol = discriminatory_reward(inst)
        assert not any(note.startswith("hessian") for note in sol.warnings)
        assert np.max(np.linalg.eigvalsh(revenue_hessian(inst, sol.r))) <= 1e-6


def test_negative_reward_is_reported():
    inst = make_instance([10.0], [1.0])
    sol = discriminatory_reward(inst)
    assert sol.r[0] == pytest.approx(-14 / 3)
    assert any(note.startswith("negative-reward") for note in sol.warnings)


def test_non_interior_solution_uses_dynamics():
    params = MarketParams(c=16.0, mu=0.01, s=20.0, t=0.05)
    inst = make_instance([15.0, 15.0], [1.0, 1.0], [[0.0, 0.1], [0.1, 0.0]], params=params)
    sol = uniform_reward(inst)
    assert not sol.matrix_interior
    assert sol.equilibrium.method == "best-response"
    np.testing.assert_allclose(sol.equilibrium.x, [0.0, 0.0])
    assert sol.revenue == 0.0
    assert any(note.startswith("non-interior") for note in sol.warnings)


def test_revenue_bases_agree_when_interior(two_mu):
    x_eq, pi_eq = revenue_at(two_mu, [0.5, 0.5])
    x_mat, pi_mat = revenue_at(two_mu, [0.5, 0.5], basis=BASIS_MATRIX)
    np.testing.assert_allclose(x_eq, x_mat)
    assert pi_eq == pytest.approx(pi_mat)
    with pytest.raises(InvariantError):
        revenue_at(two_mu, [0.5, 0.5], basis="otra")


def test_bound_reduces_to_half_gap_when_t_vanishes():
    params = MarketParams(c=16.0, mu=0.01, s=20.0, t=1e-12)
    inst = make_instance([15.0, 15.0, 15.0], [15.0, 14.0, 16.0], params=params)
    bound = incomplete_info_bound(shape_of(inst), ExpectationProfile(15.0, 15.0))
    assert bound == pytest.approx(0.6, abs=1e-9)


def test_bound_single_mu_closed_form():
    params = MarketParams(c=16.0, mu=0.01, s=20.0, t=0.05)
    inst = make_instance([15.0], [2.0], params=params)
    e_a, e_b = 15.0, 2.0
    expected = ((16.0 - e_a) / 2 + 0.1
                - 0.0005 * (0.2 + e_a - 16.0) / (4 * e_b + 2 * 0.0005))
    assert incomplete_info_bound(shape_of(inst), ExpectationProfile(e_a, e_b)) == pytest.approx(expected, abs=1e-12)


def test_realized_bound_matches_bound_at_mean():
    params = MarketParams(c=16.0, mu=0.01, s=20.0, t=0.05)
    inst = make_instance([15.0, 15.5, 14.0], [3.0, 2.0, 4.0], [[0.0, 0.5, 0.0], [0.5, 0.0, 1.0], [0.0, 1.0, 0.0]],
                         params=params)
    exp = ExpectationProfile(14.8, 3.0)
    assert realized_bound_reward(shape_of(inst), 14.8, [3.0, 3.0, 3.0]) == pytest.approx(
        incomplete_info_bound(shape_of(inst), exp), abs=1e-12)


def test_bound_requires_assumption2():
    params = MarketParams(c=1.0, mu=1.0, s=4.0, t=1.0)
    inst = make_instance([2.0], [1.0], params=params)
    with pytest.raises(InvariantError, match="Supuesto 2"):
        incomplete_info_bound(shape_of(inst), ExpectationProfile(2.0, 1.0))


def test_bound_objective_is_convex_in_matrix():
    rng = np.random.default_rng(17)
    for _ in range(100):
        n = int(rng.integers(1, 8))
        a, b = rng.normal(size=(n, n)), rng.normal(size=(n, n))
        x = a @ a.T + n * np.eye(n)
        y = b @ b.T + n * np.eye(n)
        beta = float(rng.uniform())
        mixed = ones_quadratic_inverse(beta * x + (1 - beta) * y)
        assert mixed <= beta * ones_quadratic_inverse(x) + (1 - beta) * ones_quadratic_inverse(y) + 1e-9


def test_bound_direction_by_monte_carlo_default_scenario():
    cfg = ScenarioConfig(seed=20180101)
    inst = generate_random_instance(cfg)
    exp = expectation_of(cfg)
    assert exp.e_a + cfg.params.mu * cfg.params.s <= cfg.params.c
    check = jensen_monte_carlo(shape_of(inst), exp, lambda rng, n: sample_b(cfg, rng, n), draws=1000, seed=1)
    assert check.draws == 1000
    assert check.holds


def test_bound_direction_single_mu():
    cfg = ScenarioConfig(n=1, mu_b=2.0, sigma2_b=0.25, sigma2_g=0.0, mu_g=0.0, seed=3)
    inst = generate_random_instance(cfg)
    check = jensen_monte_carlo(shape_of(inst), expectation_of(cfg), lambda rng, n: sample_b(cfg, rng, n),
                               draws=2000, seed=4)
    assert check.mean >= check.bound - 2 * check.stderr


def test_bound_reward_regime():
    params = MarketParams(c=16.0, mu=0.01, s=20.0, t=0.05)
    inst = make_instance([15.0, 15.5], [15.0, 15.0], [[0.0, 1.0], [1.0, 0.0]], params=params)
    sol = uniform_bound_reward(inst, ExpectationProfile.from_instance(inst))
    assert sol.regime == UNIFORM_BOUND
    assert sol.r[0] == sol.r[1]


def test_bound_above_uniform_optimum_is_flagged():
    params = MarketParams(c=16.0, mu=0.01, s=20.0, t=0.05)
    inst = make_instance([15.0], [2.0], params=params)
    optimum = uniform_reward(inst).r[0]
    assert optimum == pytest.approx(0.60005, abs=1e-5)

    high = uniform_bound_reward(inst, ExpectationProfile(14.0, 2.0))
    assert high.r[0] == pytest.approx(1.1001125, abs=1e-6)
    flagged = [note for note in high.warnings if note.startswith("bound-above-optimum:")]
    assert len(flagged) == 1
    assert "0.600050" in flagged[0]

    low = uniform_bound_reward(inst, ExpectationProfile(15.5, 2.0))
    assert low.r[0] < optimum
    assert not any(note.startswith("bound-above-optimum:") for note in low.warnings)


def test_revenue_ordering_on_default_scenario():
    cfg = ScenarioConfig(seed=20180102)
    inst = generate_random_instance(cfg)
    assert check_assumption2(inst)
    disc = discriminatory_reward(inst)
    uni = uniform_reward(inst)
    bound = uniform_bound_reward(inst, expectation_of(cfg))
    assert disc.matrix_revenue >= uni.matrix_revenue - 1e-9
    assert uni.matrix_revenue >= bound.matrix_revenue - 1e-9


def test_clamped_uniform_never_loses_to_closed_form():
    params = MarketParams(c=16.0, mu=0.01, s=20.0, t=0.05)
    inst = make_instance([15.0], [1.0], params=params)
    clamped = uniform_reward_clamped(inst)
    assert clamped.r[0] >= 0
    assert clamped.revenue >= uniform_reward(inst).revenue - 1e-12


def test_clamped_uniform_recovers_interior_optimum(single_mu):
    clamped = uniform_reward_clamped(single_mu)
    assert clamped.r[0] == pytest.approx(2 / 3, abs=1e-6)


def test_clamped_regime_is_dispatched(single_mu):
    sol = solve_regime(single_mu, UNIFORM_CLAMPED)
    assert sol.regime == UNIFORM_CLAMPED
    assert uniform_reward_clamped(single_mu).regime == UNIFORM_CLAMPED
    with pytest.raises(InvariantError):
        solve_regime(single_mu, "otro")


def test_grid_oracles_validate_arguments(single_mu):
    assert brute_force_uniform(single_mu, (1.0, 1.0), 5) == 1.0
    with pytest.raises(InvariantError):
        brute_force_uniform(single_mu, (2.0, 1.0), 5)
    with pytest.raises(InvariantError):
        brute_force_uniform(single_mu, (0.0, 1.0), 1)
    with pytest.raises(InvariantError):
        brute_force_discriminatory(make_instance([2.0] * 4, [1.0] * 4), (0.0, 1.0), 3)
