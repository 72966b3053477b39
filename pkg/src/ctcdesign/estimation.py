"""Maximum-likelihood estimation on aggregate share data.

Constraints (effects coding, sigma >= 0, nest-scale bounds, simplex weights)
hold by construction through the families' reparameterizations, so each
fit is a quasi-Newton problem restarted from several points. The only box
is a loose one on the RCL coefficients, which keeps the simulated
likelihood from running off to infinite scale.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_market_data, check_markets
from .choice_models import (
    DEFAULT_LAMBDA_MAX,
    DEFAULT_RCL_BOUND,
    DEFAULT_RCL_DRAWS,
    ChoiceModel,
    CtcFamily,
    MnlFamily,
    NmlFamily,
    RclFamily,
)
from .market import stack_markets, stack_shares
from .population import N_STYLES

log = logging.getLogger(__name__)

MODEL_KINDS = ("mnl", "rcl", "nml", "ctc")


@dataclass
class EstimationOptions:
    multistart_count: int = 5
    max_iterations: int = 3000
    gradient_tolerance: float = 1e-7
    function_tolerance: float = 1e-12
    rcl_mc_draws: int = DEFAULT_RCL_DRAWS
    seed: int = 0
    lambda_max: float = DEFAULT_LAMBDA_MAX
    rcl_coefficient_bound: float | None = DEFAULT_RCL_BOUND
    ctc_sparsify: bool = False
    log_path: str | None = None

    def __post_init__(self):
        for name in ("multistart_count", "max_iterations", "rcl_mc_draws"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if min(self.gradient_tolerance, self.function_tolerance, self.lambda_max) <= 0:
            raise ValueError("tolerances and lambda_max must be positive")
        if self.rcl_coefficient_bound is not None and self.rcl_coefficient_bound <= 0:
            raise ValueError("rcl_coefficient_bound must be positive or None")


@dataclass
class FitResult:
    model: ChoiceModel
    final_ll: float
    converged: bool
    start_index: int
    wall_time: float
    n_iterations: int = 0
    message: str = ""
    degenerate: bool = False
    start_lls: list = field(default_factory=list)
    final_lls: list = field(default_factory=list)


def make_family(kind, n_styles=N_STYLES, options: EstimationOptions | None = None):
    options = options or EstimationOptions()
    if kind == "mnl":
        return MnlFamily(n_styles)
    if kind == "rcl":
        draw_seed = int(np.random.SeedSequence([options.seed, 7]).generate_state(1)[0])
        return RclFamily(n_styles, options.rcl_mc_draws, draw_seed)
    if kind == "nml":
        return NmlFamily(n_styles, options.lambda_max)
    if kind == "ctc":
        return CtcFamily(n_styles)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def initialize(kind, family, rng: np.random.Generator) -> np.ndarray:
    """Starting point in the family's free parameterization.

    Means start as 0.1 * N(0, 1) with the price log-coefficient at 0, RCL
    scales at 0.1, nest scales at 1, CTC weights uniform plus a small
    Dirichlet jitter.
    """
    if family.kind != kind:
        raise ValueError("family does not match kind")
    return family.initial(rng)


def _start_rngs(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def estimate(kind, markets, shares, options: EstimationOptions | None = None, n_styles=N_STYLES) -> FitResult:
    """Best local maximum of the log-likelihood over ``multistart_count`` starts."""
    options = options or EstimationOptions()
    markets, shares = check_market_data(markets, shares, n_styles)
    batch = stack_markets(markets, n_styles)
    S = stack_shares(shares, batch.p.shape[1])
    degenerate = bool(np.all(S[:, 0] >= 1.0 - 1e-12))
    if degenerate:
        log.warning("all markets have outside share 1; the %s likelihood is degenerate", kind)
    fam = make_family(kind, n_styles, options)
    n_markets = batch.n_markets
    t0 = time.perf_counter()

    log_rows = []
    scale = fam.param_scale()
    box = fam.bounds(options.rcl_coefficient_bound)
    if box is not None:
        box = [(lo / d, hi / d) for (lo, hi), d in zip(box, scale)]

    def objective(x):
        ll, g = fam.loglik(x, batch, S)
        if not np.isfinite(ll):
            return np.inf, np.zeros_like(x)
        return -ll / n_markets, -g / n_markets

    def scaled_objective(y):
        f, g = objective(y * scale)
        return f, g * scale

    results = []
    for k, rng in enumerate(_start_rngs(options.seed, options.multistart_count)):
        x0 = initialize(kind, fam, rng)
        ll0 = fam.loglik(x0, batch, S, gradient=False)

        def callback(xk, k=k):
            if options.log_path is not None:
                f, g = objective(xk * scale)
                log_rows.append((k, len([r for r in log_rows if r[0] == k]) + 1, -f * n_markets, float(np.linalg.norm(g))))

        res = minimize(
            scaled_objective,
            x0 / scale,
            jac=True,
            method="L-BFGS-B",
            bounds=box,
            callback=callback,
            options={
                "maxiter": options.max_iterations,
                "gtol": options.gradient_tolerance,
                "ftol": options.function_tolerance,
                "maxcor": 30,
                "maxls": 50,
            },
        )
        res.x = res.x * scale
        ll = fam.loglik(res.x, batch, S, gradient=False)
        if not ll >= ll0:
            # keep the start if the solver wandered somewhere worse
            res.x, ll = x0, ll0
        grad_norm = float(np.max(np.abs(scaled_objective(res.x / scale)[1])))
        converged = bool(np.isfinite(ll) and (res.success or grad_norm <= 10 * options.gradient_tolerance))
        results.append((ll, k, res, converged, ll0))
        log.debug("%s start %d: ll=%.6f (from %.6f) nit=%d %s", kind, k, ll, ll0, res.nit, res.message)

    finite = [r for r in results if np.isfinite(r[0])]
    if finite:
        best = max(finite, key=lambda r: (r[0], -r[1]))
    else:
        best = results[0]
    ll, k, res, converged, _ = best
    model = fam.unpack(res.x)
    if kind == "ctc" and options.ctc_sparsify:
        model = model.sparsified()
    if options.log_path is not None:
        with open(options.log_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["start", "iteration", "log_likelihood", "gradient_norm"])
            w.writerows(log_rows)
    return FitResult(
        model=model,
        final_ll=float(ll),
        converged=converged and not degenerate,
        start_index=k,
        wall_time=time.perf_counter() - t0,
        n_iterations=int(res.nit),
        message=str(res.message),
        degenerate=degenerate,
        start_lls=[float(r[4]) for r in results],
        final_lls=[float(r[0]) for r in results],
    )


class ChoiceModelEstimator(BaseEstimator):
    """scikit-learn style wrapper: ``fit(markets, shares)`` then ``predict_proba(markets)``.

    ``markets`` is a sequence of :class:`~ctcdesign.market.Market`; ``shares``
    a matching sequence of share vectors with the outside good first.
    """

    kind: str = ""

    def __init__(
        self,
        n_styles=N_STYLES,
        multistart_count=5,
        max_iterations=3000,
        gradient_tolerance=1e-7,
        random_state=0,
    ):
        self.n_styles = n_styles
        self.multistart_count = multistart_count
        self.max_iterations = max_iterations
        self.gradient_tolerance = gradient_tolerance
        self.random_state = random_state

    def _options(self) -> EstimationOptions:
        return EstimationOptions(
            multistart_count=self.multistart_count,
            max_iterations=self.max_iterations,
            gradient_tolerance=self.gradient_tolerance,
            seed=self.random_state,
        )

    def fit(self, markets, shares):
        self.fit_result_ = estimate(self.kind, markets, shares, self._options(), self.n_styles)
        self.model_ = self.fit_result_.model
        self.log_likelihood_ = self.fit_result_.final_ll
        self.converged_ = self.fit_result_.converged
        return self

    def predict_proba(self, markets):
        check_is_fitted(self, "model_")
        return [self.model_.probabilities(m) for m in check_markets(markets)]

    def score(self, markets, shares):
        """Mean per-market log-likelihood."""
        from .choice_models import log_likelihood

        check_is_fitted(self, "model_")
        markets, shares = check_market_data(markets, shares, self.n_styles)
        return log_likelihood(self.model_, markets, shares, gradient=False).value / len(markets)


class MultinomialLogit(ChoiceModelEstimator):
    kind = "mnl"


class RandomCoefficientsLogit(ChoiceModelEstimator):
    kind = "rcl"

    def __init__(
        self,
        n_styles=N_STYLES,
        multistart_count=5,
        max_iterations=3000,
        gradient_tolerance=1e-7,
        random_state=0,
        n_draws=DEFAULT_RCL_DRAWS,
        coefficient_bound=DEFAULT_RCL_BOUND,
    ):
        super().__init__(n_styles, multistart_count, max_iterations, gradient_tolerance, random_state)
        self.n_draws = n_draws
        self.coefficient_bound = coefficient_bound

    def _options(self):
        opts = super()._options()
        opts.rcl_mc_draws = self.n_draws
        opts.rcl_coefficient_bound = self.coefficient_bound
        return opts


class NestedLogit(ChoiceModelEstimator):
    kind = "nml"

    def __init__(
        self,
        n_styles=N_STYLES,
        multistart_count=5,
        max_iterations=3000,
        gradient_tolerance=1e-7,
        random_state=0,
        lambda_max=DEFAULT_LAMBDA_MAX,
    ):
        super().__init__(n_styles, multistart_count, max_iterations, gradient_tolerance, random_state)
        self.lambda_max = lambda_max

    def _options(self):
        opts = super()._options()
        opts.lambda_max = self.lambda_max
        return opts


class ConsiderThenChoose(ChoiceModelEstimator):
    kind = "ctc"

    def __init__(
        self,
        n_styles=N_STYLES,
        multistart_count=5,
        max_iterations=3000,
        gradient_tolerance=1e-7,
        random_state=0,
        sparsify=False,
    ):
        super().__init__(n_styles, multistart_count, max_iterations, gradient_tolerance, random_state)
        self.sparsify = sparsify

    def _options(self):
        opts = super()._options()
        opts.ctc_sparsify = self.sparsify
        return opts


ESTIMATORS = {
    "mnl": MultinomialLogit,
    "rcl": RandomCoefficientsLogit,
    "nml": NestedLogit,
    "ctc": ConsiderThenChoose,
}
