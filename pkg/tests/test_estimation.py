import numpy as np
import pytest
from sklearn.base import clone

from conftest import random_markets
from ctcdesign.choice_models import CtcParams, MnlParams, log_likelihood, predict_proba
from ctcdesign.estimation import (
    ConsiderThenChoose,
    EstimationOptions,
    MultinomialLogit,
    NestedLogit,
    estimate,
    initialize,
    make_family,
)
from ctcdesign.market import simulate_shares
from ctcdesign.population import calibrated_population

THETA = MnlParams(0.3, -12.0, 4.0, 0.5, np.array([0.4, -0.2, 0.1, 0.3, -0.5, 0.2, 0.0, -0.1, -0.2]))


@pytest.fixture(scope="module")
def simulated():
    pop = calibrated_population()
    rng = np.random.default_rng(21)
    markets = random_markets(20, 40)
    return markets, [simulate_shares(m, pop, 100, rng) for m in markets]


def test_mnl_recovers_noiseless_parameters():
    markets = random_markets(1, 400)
    shares = [predict_proba(THETA, m) for m in markets]
    fit = estimate("mnl", markets, shares, EstimationOptions(multistart_count=2))
    got = np.r_[fit.model.theta_p, fit.model.theta_e, fit.model.theta_a, fit.model.theta_0, fit.model.theta_b]
    want = np.r_[THETA.theta_p, THETA.theta_e, THETA.theta_a, THETA.theta_0, THETA.theta_b]
    assert np.max(np.abs(got - want)) < 1e-3
    assert fit.converged


def test_no_markets_is_an_error():
    with pytest.raises(ValueError):
        estimate("mnl", [], [])


def test_unknown_kind_is_an_error(simulated):
    with pytest.raises(ValueError):
        estimate("probit", *simulated)


def test_bad_shares_rejected(simulated):
    markets, shares = simulated
    bad = [s.copy() for s in shares]
    bad[0][0] += 0.5
    with pytest.raises(ValueError):
        estimate("mnl", markets, bad)


@pytest.mark.parametrize("kind", ["mnl", "nml", "ctc"])
def test_estimation_is_deterministic(kind, simulated):
    opts = EstimationOptions(multistart_count=2, max_iterations=200)
    a = estimate(kind, *simulated, opts)
    b = estimate(kind, *simulated, opts)
    assert a.final_ll == b.final_ll
    assert a.model.to_dict() == b.model.to_dict()


def test_final_ll_not_below_any_start(simulated):
    fit = estimate("nml", *simulated, EstimationOptions(multistart_count=3, max_iterations=300))
    assert all(fit.final_ll >= s for s in fit.start_lls)
    assert fit.final_ll == max(fit.final_lls)


def test_starts_are_reproducible_and_valid():
    for kind in ("mnl", "rcl", "nml", "ctc"):
        fam = make_family(kind)
        x1 = initialize(kind, fam, np.random.default_rng(4))
        x2 = initialize(kind, fam, np.random.default_rng(4))
        np.testing.assert_array_equal(x1, x2)
        model = fam.unpack(x1)
        if kind == "ctc":
            assert model.alpha.sum() == pytest.approx(1.0, abs=1e-15)
        if kind == "nml":
            np.testing.assert_allclose(model.lam, 1.0)


def test_initial_nml_equals_mnl():
    fam = make_family("nml")
    nml = fam.unpack(initialize("nml", fam, np.random.default_rng(0)))
    mnl = MnlParams(nml.theta_p, nml.theta_e, nml.theta_a, nml.theta_0, nml.theta_b)
    for m in random_markets(2, 10):
        np.testing.assert_allclose(predict_proba(nml, m), predict_proba(mnl, m), atol=1e-12)


def test_nested_families_fit_at_least_as_well(simulated):
    opts = EstimationOptions(multistart_count=2, max_iterations=1000)
    mnl = estimate("mnl", *simulated, opts)
    nml = estimate("nml", *simulated, opts)
    assert nml.final_ll >= mnl.final_ll - 1e-6 * abs(mnl.final_ll)


def test_rcl_fit_not_worse_than_mnl(simulated):
    markets, shares = simulated
    opts = EstimationOptions(multistart_count=1, max_iterations=400, rcl_mc_draws=200)
    mnl = estimate("mnl", markets, shares, opts)
    rcl = estimate("rcl", markets, shares, opts)
    assert rcl.final_ll >= mnl.final_ll - 1e-3 * abs(mnl.final_ll)
    assert np.all(rcl.model.sigma >= 0)


def test_returned_parameters_satisfy_invariants(simulated):
    for kind in ("nml", "ctc"):
        m = estimate(kind, *simulated, EstimationOptions(multistart_count=1, max_iterations=200)).model
        if kind == "nml":
            assert abs(m.theta_b.sum()) < 1e-12
            assert np.all((m.lam > 0) & (m.lam <= m.lambda_max))
        else:
            assert np.all(m.alpha >= 0) and abs(m.alpha.sum() - 1) < 1e-12


def test_ctc_b3_recovers_alpha():
    alpha = np.array([0.25, 0.05, 0.1, 0.3, 0.05, 0.15, 0.1])
    truth = CtcParams(0.2, -12.0, 4.0, 1.0, alpha)
    markets = random_markets(6, 1000, n_styles=3)
    shares = [predict_proba(truth, m) for m in markets]
    fit = estimate("ctc", markets, shares, EstimationOptions(multistart_count=1), n_styles=3)
    assert np.abs(fit.model.alpha - alpha).sum() < 0.01


def test_degenerate_data_flagged():
    markets = random_markets(3, 5)
    shares = [np.r_[1.0, np.zeros(m.n_vehicles)] for m in markets]
    fit = estimate("mnl", markets, shares, EstimationOptions(multistart_count=1, max_iterations=50))
    assert fit.degenerate and not fit.converged


def test_estimation_log_written(tmp_path, simulated):
    path = tmp_path / "log.csv"
    estimate("mnl", *simulated, EstimationOptions(multistart_count=1, log_path=str(path)))
    lines = path.read_text().splitlines()
    assert lines[0] == "start,iteration,log_likelihood,gradient_norm"
    assert len(lines) > 2


def test_sklearn_estimators(simulated):
    markets, shares = simulated
    est = MultinomialLogit(multistart_count=1)
    assert clone(est).get_params() == est.get_params()
    est.fit(markets, shares)
    probs = est.predict_proba(markets[:3])
    assert len(probs) == 3 and probs[0].sum() == pytest.approx(1.0)
    assert est.score(markets, shares) == pytest.approx(est.log_likelihood_ / len(markets))
    assert NestedLogit(lambda_max=5.0).get_params()["lambda_max"] == 5.0
    ctc = ConsiderThenChoose(multistart_count=1, max_iterations=100, sparsify=True).fit(markets, shares)
    assert isinstance(ctc.model_, CtcParams)
    assert log_likelihood(ctc.model_, markets, shares, gradient=False).finite


def test_unfitted_estimator_raises(simulated):
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        NestedLogit().predict_proba(simulated[0])


def test_rcl_box_keeps_small_sample_fit_finite():
    # 10 markets: unboxed, the simulated likelihood drifts to coefficients in the thousands
    pop = calibrated_population()
    rng = np.random.default_rng(4)
    markets = random_markets(31, 10)
    shares = [simulate_shares(m, pop, 100, rng) for m in markets]
    opts = EstimationOptions(multistart_count=1, rcl_mc_draws=200)
    fit = estimate("rcl", markets, shares, opts)
    fam = make_family("rcl", options=opts)
    x = fam.pack(fit.model)
    hi = np.array([b[1] for b in fam.bounds(opts.rcl_coefficient_bound)])
    assert np.all(np.abs(x) <= hi + 1e-9)
    for m in random_markets(32, 20):
        assert np.all(predict_proba(fit.model, m) > 0)
    with pytest.raises(ValueError):
        EstimationOptions(rcl_coefficient_bound=0.0)
