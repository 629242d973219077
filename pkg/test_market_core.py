import json

import numpy as np
import pytest

from conftest import fixture_path, make_instance, random_market
from market_core import (
    InstanceFormatError,
    InvariantError,
    MarketParams,
    check_assumption1,
    check_assumption2,
    check_positive_definite,
    csp_revenue,
    dump_instance,
    gershgorin_bound,
    instance_from_dict,
    is_diagonally_dominant,
    load_instance,
    load_reward,
    mu_utilities,
    mu_utility,
    symmetrize,
    total_mu_utility,
)


def test_utility_two_mu_equilibrium_point(two_mu):
    x = [4 / 3, 4 / 3]
    assert mu_utility(two_mu, 0, x, [1.0, 1.0]) == pytest.approx(16 / 9, abs=1e-12)
    assert mu_utility(two_mu, 1, x, [1.0, 1.0]) == pytest.approx(16 / 9, abs=1e-12)


def test_utility_zero_participation(two_mu):
    assert mu_utility(two_mu, 0, [0.0, 3.0], [5.0, 5.0]) == 0.0


def test_utility_separable_without_ties():
    inst = make_instance([3.0, 2.5], [1.0, 2.0])
    alone = make_instance([2.5], [2.0])
    assert mu_utility(inst, 1, [0.7, 1.3], [0.4, 0.2]) == pytest.approx(mu_utility(alone, 0, [1.3], [0.2]))


def test_utility_index_out_of_range(two_mu):
    with pytest.raises(IndexError):
        mu_utility(two_mu, 2, [1.0, 1.0], [0.0, 0.0])


def test_revenue_examples(single_mu):
    assert csp_revenue(single_mu, [1.0], [0.0]) == pytest.approx(3.0)
    assert csp_revenue(single_mu, [0.0], [2.0]) == 0.0


def test_revenue_non_positive_when_reward_equals_s():
    params = MarketParams(c=1.0, mu=1.0, s=4.0, t=1.0)
    inst = make_instance([2.0, 3.0], [1.0, 1.0], params=params)
    for x in ([0.5, 0.5], [2.0, 0.1], [3.0, 4.0]):
        assert csp_revenue(inst, x, [4.0, 4.0]) <= 0.0


def test_revenue_is_concave_in_participation(rng):
    for _ in range(200):
        n = int(rng.integers(1, 9))
        inst = random_market(rng, n)
        r = rng.uniform(-2.0, 4.0, size=n)
        x = rng.uniform(-3.0, 5.0, size=n)
        y = rng.uniform(-3.0, 5.0, size=n)
        beta = float(rng.uniform())
        mixed = csp_revenue(inst, beta * x + (1 - beta) * y, r)
        assert mixed >= beta * csp_revenue(inst, x, r) + (1 - beta) * csp_revenue(inst, y, r) - 1e-9


def test_total_utility_at_matrix_profile_is_quadratic(rng):
    for n in (2, 5, 12):
        inst = random_market(rng, n)
        r = rng.uniform(-1.0, 1.0, size=n)
        x = np.linalg.solve(np.diag(2 * inst.b) - inst.G, inst.a + r - inst.params.c)
        assert total_mu_utility(inst, x, r) == pytest.approx(float(np.sum(inst.b * x ** 2)), rel=1e-10)
        np.testing.assert_allclose(mu_utilities(inst, x, r), inst.b * x ** 2, rtol=1e-9, atol=1e-12)


def test_assumption1_without_ties_has_unit_margin():
    inst = load_instance(fixture_path("no_ties.json"))
    report = check_assumption1(inst)
    assert report.holds
    assert report.min_margin == 1.0


def test_assumption1_boundary_is_violation():
    inst = make_instance([2.0, 2.0], [1.0, 1.0], [[0.0, 2.0], [2.0, 0.0]])
    report = check_assumption1(inst)
    assert not report.holds
    assert report.min_margin == 0.0


def test_assumption2_boundary_included():
    params = MarketParams(c=16.0, mu=0.5, s=2.0, t=0.05)
    assert check_assumption2(make_instance([15.0], [1.0], params=params))
    params = MarketParams(c=15.5, mu=0.5, s=2.0, t=0.05)
    assert not check_assumption2(make_instance([15.0], [1.0], params=params))


def test_assumption1_implies_positive_definite(rng):
    for _ in range(1000):
        n = int(rng.integers(2, 21))
        inst = random_market(rng, n, ratio=0.99, density=float(rng.uniform(0.1, 1.0)))
        assert check_assumption1(inst).holds
        assert is_diagonally_dominant(inst)
        report = check_positive_definite(inst)
        assert report.holds
        assert gershgorin_bound(inst) <= report.min_eigenvalue + 1e-12


def test_loader_rejects_asymmetric_graph():
    with pytest.raises(InvariantError, match=r"graph\[0\]\[1\]"):
        load_instance(fixture_path("asymmetric.json"))


def test_loader_reports_json_position():
    with pytest.raises(InstanceFormatError, match="línea 4"):
        load_instance(fixture_path("broken.json"))


def test_loader_reports_missing_key():
    doc = {"profiles": [{"a": 1.0, "b": 1.0}], "graph": [[0.0]]}
    with pytest.raises(InstanceFormatError, match="params"):
        instance_from_dict(doc)
    doc = {"profiles": [{"a": 1.0}], "graph": [[0.0]], "params": {"c": 1, "mu": 1, "s": 1, "t": 1}}
    with pytest.raises(InstanceFormatError, match=r"profiles\[0\]\.b"):
        instance_from_dict(doc)


def test_loader_reports_invariant_coordinates():
    base = {"graph": [[0.0, 0.0], [0.0, 0.0]], "params": {"c": 1, "mu": 1, "s": 1, "t": 1}}
    with pytest.raises(InvariantError, match=r"profiles\[1\]"):
        instance_from_dict({**base, "profiles": [{"a": 1.0, "b": 1.0}, {"a": 1.0, "b": -2.0}]})
    with pytest.raises(InvariantError, match=r"graph\[1\]\[1\]"):
        instance_from_dict({**base, "profiles": [{"a": 1.0, "b": 1.0}] * 2,
                            "graph": [[0.0, 0.0], [0.0, 0.3]]})
    with pytest.raises(InvariantError, match="params.mu"):
        instance_from_dict({**base, "profiles": [{"a": 1.0, "b": 1.0}] * 2,
                            "params": {"c": 1, "mu": 0, "s": 1, "t": 1}})


def test_loader_rejects_wrong_types():
    doc = {"profiles": [{"a": "dos", "b": 1.0}], "graph": [[0.0]], "params": {"c": 1, "mu": 1, "s": 1, "t": 1}}
    with pytest.raises(InstanceFormatError, match=r"profiles\[0\]\.a"):
        instance_from_dict(doc)


def test_dump_and_load_keep_graph_scale(tmp_path):
    inst = make_instance([2.0, 3.0], [1.0, 1.5], [[0.0, 0.25], [0.25, 0.0]])
    inst = type(inst).from_arrays(inst.a, inst.b, inst.G, inst.params, scale=0.5)
    path = tmp_path / "inst.json"
    dump_instance(inst, str(path))
    again = load_instance(str(path))
    assert again.to_dict() == inst.to_dict()
    assert again.graph.scale == 0.5


def test_symmetrize_averages_and_clamps():
    graph = symmetrize([[1.0, 0.4, -1.0], [0.2, 0.0, 0.0], [0.0, 0.0, 5.0]])
    np.testing.assert_allclose(graph.weights, [[0.0, 0.3, 0.0], [0.3, 0.0, 0.0], [0.0, 0.0, 0.0]])


def test_reward_length_mismatch_names_both_lengths():
    with pytest.raises(InvariantError) as info:
        load_reward(fixture_path("reward_three.json"), 2)
    assert "3" in str(info.value) and "N=2" in str(info.value)


def test_reward_accepts_bare_array(tmp_path):
    path = tmp_path / "r.json"
    path.write_text(json.dumps([0.5, 1.5]), encoding="utf-8")
    np.testing.assert_array_equal(load_reward(str(path), 2), [0.5, 1.5])
