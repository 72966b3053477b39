import numpy as np
import pytest

from ctcdesign.choice_models import CtcParams, MnlParams, NmlParams, RclParams
from ctcdesign.engineering import EngineeringConfig, default_engineering
from ctcdesign.market import generate_markets
from ctcdesign.population import PopulationSpec, all_rules, calibrated_population


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def pop():
    return calibrated_population()


@pytest.fixture(scope="session")
def cfg():
    return default_engineering()


def random_markets(seed, n, J=5, n_styles=9):
    return generate_markets(np.random.default_rng(seed), n, J, n_styles)


def random_effects(rng, B, scale=0.5):
    v = rng.normal(0.0, scale, B)
    return v - v.mean()


def random_model(kind, rng, B=9):
    """A valid parameter point of each family, near the calibrated population's scale."""
    base = dict(theta_p=0.5 + 0.3 * rng.normal(), theta_e=-10.0 + 3 * rng.normal(), theta_a=3.0 + rng.normal(), theta_0=0.5 * rng.normal())
    if kind == "mnl":
        return MnlParams(**base, theta_b=random_effects(rng, B))
    if kind == "nml":
        return NmlParams(**base, theta_b=random_effects(rng, B), lam=rng.uniform(0.3, 2.0, B))
    if kind == "ctc":
        return CtcParams(**base, alpha=rng.dirichlet(np.ones(2**B - 1)))
    if kind == "rcl":
        mu = np.r_[base["theta_p"], base["theta_e"], base["theta_a"], base["theta_0"], random_effects(rng, B)]
        sigma = rng.uniform(0.05, 0.5, 4 + B)
        return RclParams(mu, sigma, n_draws=200, draw_seed=int(rng.integers(1 << 31)))
    raise ValueError(kind)


def small_population(B, alpha=None, means=(0.0, -20.0, 5.0, 3.0), sds=(0.2, 1.0, 0.3, 0.3)):
    rules = all_rules(B)
    alpha = np.full(len(rules), 1.0 / len(rules)) if alpha is None else np.asarray(alpha, dtype=float)
    keep = alpha > 0
    return PopulationSpec(rules[keep], alpha[keep], means, sds)


def small_engineering(B):
    return EngineeringConfig(default_engineering().styles[:B])


def gauss_hermite_expectation(f, means, sds, n_nodes=12):
    """E[f(theta)] for independent normal coefficients by tensor Gauss-Hermite quadrature.

    ``f`` maps an (N, d) coefficient array to an (N, ...) array. Dimensions
    with zero sd collapse to a single node.
    """
    means = np.asarray(means, dtype=float)
    sds = np.asarray(sds, dtype=float)
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / w.sum()
    axes, weights = [], []
    for m, s in zip(means, sds):
        if s == 0:
            axes.append(np.array([m]))
            weights.append(np.array([1.0]))
        else:
            axes.append(m + s * x)
            weights.append(w)
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(means))
    wt = np.ones(1)
    for wi in weights:
        wt = np.outer(wt, wi).ravel()
    vals = np.asarray(f(grid))
    return np.tensordot(wt, vals, axes=(0, 0))


# one "criterion N: PASS/FAIL" line per acceptance check, printed after the run
ACCEPTANCE_LINES: dict = {}


def report_criterion(n, ok, detail):
    ACCEPTANCE_LINES[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[n])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
