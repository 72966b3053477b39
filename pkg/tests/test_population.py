import numpy as np
import pytest

from ctcdesign.population import (
    TABLE2_ACCEPTANCE,
    CoefficientDraw,
    PopulationSpec,
    ScreeningRule,
    all_rules,
    calibrated_population,
    default_population,
    independent_acceptance_alpha,
    sample_individual,
    sample_individuals,
    true_utility,
)


def test_true_utility_table_means():
    # -exp(2) * 2 - 36.8 / 30 + 11.3 / 8 - 23.2, evaluated by hand:
    # -14.7781122 - 1.2266667 + 1.4125 - 23.2 = -37.7922789
    u = true_utility(30.0, 8.0, 2.0, CoefficientDraw(2.0, -36.8, 11.3, -23.2))
    assert u == pytest.approx(-37.792278864527965, abs=1e-9)


def test_true_utility_zero_terms():
    assert true_utility(17.0, 4.0, 0.0, CoefficientDraw(1.3, 0.0, 0.0, 0.0)) == 0.0


def test_true_utility_decreasing_in_price():
    d = CoefficientDraw(2.0, -36.8, 11.3, -23.2)
    assert true_utility(30, 8, 3.0, d) < true_utility(30, 8, 2.0, d)


@pytest.mark.parametrize("args", [(0.0, 8, 2), (30, -1, 2), (30, 8, -0.1), (np.nan, 8, 2), (30, 8, np.inf)])
def test_true_utility_rejects_bad_inputs(args):
    with pytest.raises(ValueError):
        true_utility(*args, CoefficientDraw(2.0, -36.8, 11.3, -23.2))


def test_true_utility_rejects_nonfinite_coefficients():
    with pytest.raises(ValueError):
        true_utility(30, 8, 2, CoefficientDraw(np.nan, 0, 0, 0))


def test_null_rule_rejected():
    with pytest.raises(ValueError):
        ScreeningRule((0,) * 9)
    assert str(ScreeningRule.from_string("010000001")) == "010000001"
    assert ScreeningRule.from_string("010000001").considers(1)


def test_default_population_tables():
    pop = default_population()
    np.testing.assert_array_equal(pop.coeff_means, [2.0, -36.8, 11.3, -23.2])
    np.testing.assert_array_equal(pop.coeff_sds, [0.1, 2.2, 0.3, 0.5])
    assert np.all(pop.alpha >= 0)
    assert abs(pop.alpha.sum() - 1) < 1e-12
    assert np.all(pop.rules.any(axis=1))
    np.testing.assert_allclose(pop.marginal_acceptance(), TABLE2_ACCEPTANCE, atol=0.005)
    assert abs(pop.marginal_acceptance()[8] - 0.10) <= 0.005


def test_calibrated_population_only_flips_constant():
    a, b = default_population(), calibrated_population()
    np.testing.assert_array_equal(a.alpha, b.alpha)
    np.testing.assert_array_equal(a.coeff_means[:3], b.coeff_means[:3])
    assert b.coeff_means[3] == -a.coeff_means[3]


def test_independent_acceptance_alpha_exact_marginals():
    rules, alpha = independent_acceptance_alpha([0.5, 0.2, 0.7], min_mass=0.0)
    np.testing.assert_allclose(alpha @ rules, [0.5, 0.2, 0.7], atol=1e-12)
    assert len(rules) == 7


def test_all_rules_order_and_count():
    r = all_rules(3)
    assert r.shape == (7, 3)
    assert r[0].tolist() == [True, False, False]
    assert r[-1].tolist() == [True, True, True]


def test_population_validation():
    rules = all_rules(2)
    with pytest.raises(ValueError):
        PopulationSpec(rules, [0.5, 0.6, -0.1], np.zeros(4), np.ones(4))
    with pytest.raises(ValueError):  # style 2 acceptable under no rule with mass
        PopulationSpec(rules, [1.0, 0.0, 0.0], np.zeros(4), np.ones(4))
    with pytest.raises(ValueError):
        PopulationSpec(rules, [1 / 3] * 3, np.zeros(4), -np.ones(4))


def test_point_mass_rule_and_zero_sd():
    rules = all_rules(3)
    alpha = np.zeros(7)
    alpha[-1] = 1.0
    pop = PopulationSpec(rules, alpha, [1.0, -2.0, 3.0, 4.0], np.zeros(4))
    rng = np.random.default_rng(0)
    for _ in range(20):
        rule, draw = sample_individual(rng, pop)
        assert rule.bits == (1, 1, 1)
        assert draw.as_array().tolist() == [1.0, -2.0, 3.0, 4.0]


def test_rule_frequencies_match_alpha():
    pop = default_population()
    idx, coefs = sample_individuals(np.random.default_rng(3), pop, 100_000)
    freq = np.bincount(idx, minlength=len(pop.alpha)) / len(idx)
    assert np.max(np.abs(freq - pop.alpha)) <= 0.01
    assert coefs.shape == (100_000, 4)
    np.testing.assert_allclose(coefs.mean(axis=0), pop.coeff_means, atol=0.05)


def test_population_roundtrip(tmp_path):
    pop = calibrated_population()
    pop.save(tmp_path / "pop.json")
    back = PopulationSpec.load(tmp_path / "pop.json")
    np.testing.assert_allclose(back.alpha, pop.alpha, rtol=1e-15)
    np.testing.assert_array_equal(back.rules, pop.rules)
    assert back.fingerprint() == pop.fingerprint()


def test_variance_spread_takes_square_root():
    doc = calibrated_population().to_dict()
    doc["spread"] = "variance"
    doc["coeff_sds"] = {k: 4.0 for k in doc["coeff_sds"]}
    np.testing.assert_allclose(PopulationSpec.from_dict(doc).coeff_sds, 2.0)
