import math
import os

import numpy as np
import pytest

from conftest import PROFILES
from market_core import InstanceFormatError, InvariantError, assumption1_ratios, check_assumption1
from scenario import (
    ASSUMPTION1_TARGET,
    MAX_RESAMPLE,
    ScenarioConfig,
    chain_weight,
    expected_clamped_normal,
    expected_truncated_normal,
    expectation_of,
    generate_chain_instance,
    generate_random_instance,
    load_scenario,
    sample_b,
    scenario_from_dict,
)
from experiments import CHAIN_PARAMS


def test_degenerate_variances_give_exact_values():
    cfg = ScenarioConfig(n=4, mu_a=3.0, sigma2_a=0.0, mu_b=15.0, sigma2_b=0.0, mu_g=0.3, sigma2_g=0.0)
    inst = generate_random_instance(cfg)
    np.testing.assert_array_equal(inst.a, [3.0] * 4)
    np.testing.assert_array_equal(inst.b, [15.0] * 4)
    expected = np.full((4, 4), 0.3)
    np.fill_diagonal(expected, 0.0)
    np.testing.assert_array_equal(inst.G, expected)
    assert inst.graph.scale == 1.0


def test_negative_draws_are_clamped():
    cfg = ScenarioConfig(n=6, mu_a=-1.0, sigma2_a=0.0, mu_g=-0.5, sigma2_g=0.0)
    inst = generate_random_instance(cfg)
    assert np.all(inst.a == 0.0)
    assert np.all(inst.G == 0.0)


def test_same_seed_same_instance():
    cfg = ScenarioConfig(n=30, seed=77)
    assert generate_random_instance(cfg).to_dict() == generate_random_instance(cfg).to_dict()
    other = generate_random_instance(cfg.with_changes(seed=78))
    assert other.to_dict() != generate_random_instance(cfg).to_dict()


def test_default_scenarios_satisfy_assumption1():
    for seed in range(100):
        inst = generate_random_instance(ScenarioConfig(seed=seed))
        assert float(np.max(assumption1_ratios(inst))) <= ASSUMPTION1_TARGET + 1e-12
        assert check_assumption1(inst).holds
        assert np.all(inst.b >= 0.5)


def test_rescaling_is_recorded():
    cfg = ScenarioConfig(n=40, mu_g=2.0, sigma2_g=0.0, mu_b=2.0, sigma2_b=0.0)
    inst = generate_random_instance(cfg)
    assert inst.graph.scale < 1.0
    assert float(np.max(assumption1_ratios(inst))) == pytest.approx(ASSUMPTION1_TARGET)
    assert inst.to_dict()["graph_scale"] == inst.graph.scale


def test_rescaling_can_be_disabled():
    cfg = ScenarioConfig(n=40, mu_g=2.0, sigma2_g=0.0, mu_b=2.0, sigma2_b=0.0, enforce_assumption1=False)
    inst = generate_random_instance(cfg)
    assert inst.graph.scale == 1.0
    assert not check_assumption1(inst).holds


def test_sweeping_mu_g_keeps_common_draws():
    base = ScenarioConfig(n=10, sigma2_g=0.01, seed=5)
    previous = None
    for mu_g in (0.0, 0.1, 0.2, 0.3):
        inst = generate_random_instance(base.with_changes(mu_g=mu_g))
        assert inst.graph.scale == 1.0
        if previous is not None:
            np.testing.assert_array_equal(inst.a, previous.a)
            np.testing.assert_array_equal(inst.b, previous.b)
            assert np.all(inst.G >= previous.G)
        previous = inst


def test_chain_instance_shape():
    inst = generate_chain_instance(51, CHAIN_PARAMS, 15.0, 0.1)
    assert inst.n == 51
    assert inst.G[0, 1] == pytest.approx(0.05)
    assert np.count_nonzero(inst.G) == 2 * 50
    np.testing.assert_array_equal(inst.G, inst.G.T)
    for i in range(1, 51):
        assert inst.G[i - 1, i] == chain_weight(i, 51)
    assert check_assumption1(inst).holds


def test_chain_needs_two_mus():
    with pytest.raises(InvariantError):
        generate_chain_instance(1, CHAIN_PARAMS, 15.0, 0.1)


def test_expectations_without_variance():
    cfg = ScenarioConfig(sigma2_a=0.0, sigma2_b=0.0)
    exp = expectation_of(cfg)
    assert exp.e_a == 15.0 and exp.e_b == 15.0
    assert expected_clamped_normal(-2.0, 0.0) == 0.0


def test_default_expectations_are_close_to_means():
    exp = expectation_of(ScenarioConfig())
    assert exp.e_a == pytest.approx(15.0, abs=1e-6)
    assert exp.e_b == pytest.approx(15.0, abs=1e-6)


def test_clamped_normal_mean_against_monte_carlo():
    draws = np.maximum(0.0, 0.1 + np.random.default_rng(2024).standard_normal(1_000_000))
    stderr = draws.std() / math.sqrt(draws.size)
    assert abs(draws.mean() - expected_clamped_normal(0.1, 1.0)) <= 3 * stderr


def test_truncated_normal_mean_matches_sampler():
    cfg = ScenarioConfig(mu_b=1.0, sigma2_b=1.0)
    values = sample_b(cfg, np.random.default_rng(9), 200_000)
    assert values.min() >= cfg.b_floor
    stderr = values.std() / math.sqrt(values.size)
    assert abs(values.mean() - expected_truncated_normal(1.0, 1.0, cfg.b_floor)) <= 4 * stderr


def test_sample_b_gives_up():
    cfg = ScenarioConfig(mu_b=0.1, sigma2_b=0.0)
    with pytest.raises(InvariantError, match=str(MAX_RESAMPLE)):
        sample_b(cfg, np.random.default_rng(0), 3)


def test_config_validation():
    with pytest.raises(InvariantError):
        ScenarioConfig(n=0)
    with pytest.raises(InvariantError):
        ScenarioConfig(sigma2_g=-1.0)
    with pytest.raises(InvariantError):
        ScenarioConfig(b_floor=0.0)


def test_load_default_profile():
    cfg = load_scenario(os.path.join(PROFILES, "default.json"))
    assert cfg.n == 100
    assert cfg.seed == 20180101
    assert cfg.params.s == 20.0
    assert cfg.sigma2_g == 1.0


def test_profile_rejects_unknown_keys_and_types():
    with pytest.raises(InstanceFormatError, match="sigma_a"):
        scenario_from_dict({"sigma_a": 1.0})
    with pytest.raises(InstanceFormatError, match="n"):
        scenario_from_dict({"n": 2.5})
    with pytest.raises(InstanceFormatError):
        scenario_from_dict([1, 2])
