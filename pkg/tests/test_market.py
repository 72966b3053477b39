import numpy as np
import pytest

from conftest import gauss_hermite_expectation, small_population
from ctcdesign.kernels import MixtureLogit
from ctcdesign.market import (
    Market,
    VehicleProfile,
    generate_market,
    read_bundle,
    read_shares_csv,
    simulate_shares,
    true_choice_probability,
    write_bundle,
    write_shares_csv,
)
from ctcdesign.population import PopulationSpec, all_rules, default_population, utilities


def test_generated_attributes_moments():
    m = generate_market(np.random.default_rng(0), 100_000)
    assert abs(m.e.mean() - 27.5) < 0.2
    freq = np.bincount(m.b, minlength=9) / len(m.b)
    assert np.max(np.abs(freq - 1 / 9)) < 0.01
    for v in m.profiles()[:1000]:
        assert isinstance(v, VehicleProfile)


def test_profile_bounds_enforced():
    with pytest.raises(ValueError):
        VehicleProfile(4.0, 5.0, 2.0, 0)
    with pytest.raises(ValueError):
        VehicleProfile(20.0, 5.0, 7.0, 0)
    with pytest.raises(ValueError):
        generate_market(np.random.default_rng(0), 0)


def test_shares_are_multiples_of_one_over_n(pop, rng):
    m = generate_market(rng, 5)
    s = simulate_shares(m, pop, 100, rng)
    assert s.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(s * 100, np.round(s * 100), atol=1e-9)
    assert np.all(s >= 0)


def test_worst_vehicle_goes_unchosen():
    m = Market([5.0], [15.0], [6.0], [2])
    s = simulate_shares(m, default_population(), 1_000_000, np.random.default_rng(1))
    assert s[0] > 0.99


def test_unconsidered_style_gets_zero_share():
    # A population must make every style acceptable, so exercise the kernel
    # with rule patterns that leave style 3 out.
    rules = all_rules(3)[[0, 1]]  # {1} and {2}
    kernel = MixtureLogit([0, 1, 2], rules, [0.5, 0.5])
    u = np.random.default_rng(2).normal(size=(50, 3))
    P = kernel.probabilities(u)
    assert P[3] == 0.0
    assert P.sum() == pytest.approx(1.0, abs=1e-12)


def test_rule_restricted_population_gives_zero_share(pop):
    # styles absent from a market receive nothing; present ones get positive share
    m = Market([30, 30], [8, 8], [1.5, 1.5], [0, 1])
    s = simulate_shares(m, pop, 20_000, np.random.default_rng(2))
    assert s.sum() == pytest.approx(1.0, abs=1e-12)
    rule_idx = np.random.default_rng(2).choice(len(pop.alpha), size=20_000, p=pop.alpha)
    frac_none = np.mean(~pop.rules[rule_idx][:, [0, 1]].any(axis=1))
    assert s[0] >= frac_none - 0.02


def test_seed_replay_bit_identical(pop):
    m = generate_market(np.random.default_rng(5), 5)
    a = simulate_shares(m, pop, 500, np.random.default_rng(9))
    b = simulate_shares(m, pop, 500, np.random.default_rng(9))
    assert a.tobytes() == b.tobytes()


def test_single_vehicle_share_matches_quadrature():
    means, sds = [0.0, -20.0, 5.0, 3.0], [0.3, 2.0, 0.5, 0.5]
    rules = all_rules(2)
    pop = PopulationSpec(rules, [0.0, 0.0, 1.0], means, sds)
    m = Market([25.0], [8.0], [2.0], [0])

    def logit(theta):
        u = utilities(m.e, m.a, m.p, theta)[:, 0]
        return 1.0 / (1.0 + np.exp(-u))

    oracle = gauss_hermite_expectation(logit, means, sds)
    s = simulate_shares(m, pop, 100_000, np.random.default_rng(4))
    assert abs(s[1] - oracle) < 0.01


def test_mnl_collapse_of_truth():
    rules = all_rules(3)
    pop = PopulationSpec(rules[[-1]], [1.0], [0.2, -15.0, 4.0, 2.0], np.zeros(4))
    m = generate_market(np.random.default_rng(0), 4, n_styles=3)
    u = -np.exp(0.2) * m.p - 15.0 / m.e + 4.0 / m.a + 2.0
    expected = np.r_[1.0, np.exp(u)] / (1.0 + np.exp(u).sum())
    np.testing.assert_allclose(true_choice_probability(m, pop, 10), expected, atol=1e-15)


def test_truth_two_styles_matches_quadrature():
    means, sds = [0.0, -20.0, 5.0, 3.0], [0.3, 2.0, 0.5, 0.5]
    alpha = [0.3, 0.2, 0.5]  # {1}, {2}, {1, 2}
    pop = small_population(2, alpha, means, sds)
    m = Market([25.0, 35.0], [8.0, 11.0], [2.0, 1.5], [0, 1])

    def per_theta(theta):
        u = utilities(m.e, m.a, m.p, theta)
        x = np.exp(u)
        out = np.zeros((len(theta), 3))
        for w, mask in zip(alpha, ([1, 0], [0, 1], [1, 1])):
            xm = x * np.array(mask)
            den = 1.0 + xm.sum(axis=1, keepdims=True)
            out += w * np.column_stack([1.0 / den[:, 0], xm / den])
        return out

    oracle = gauss_hermite_expectation(per_theta, means, sds)
    P = true_choice_probability(m, pop, 200_000, rng=7)
    np.testing.assert_allclose(P, oracle, atol=1e-3)
    assert P.sum() == pytest.approx(1.0, abs=1e-12)


def test_csv_and_bundle_roundtrip(tmp_path, pop):
    rng = np.random.default_rng(0)
    markets = [generate_market(rng, 5, market_id=i) for i in range(3)]
    shares = [simulate_shares(m, pop, 100, rng) for m in markets]
    write_shares_csv(tmp_path / "s.csv", markets, shares)
    ms, ss = read_shares_csv(tmp_path / "s.csv")
    for a, b, x, y in zip(markets, ms, shares, ss):
        np.testing.assert_array_equal(a.e, b.e)
        np.testing.assert_array_equal(a.b, b.b)
        np.testing.assert_array_equal(x, y)
    write_bundle(tmp_path / "b.json", markets, shares, seed=3)
    ms, ss, doc = read_bundle(tmp_path / "b.json")
    assert doc["seed"] == 3
    np.testing.assert_array_equal(ms[2].p, markets[2].p)
