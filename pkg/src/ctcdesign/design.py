"""Bilevel portfolio design: continuous (a, p) per vehicle inside, GA over body styles outside.

Fuel economy is eliminated through the engineering curve, so the inner
problem is a box-constrained smooth optimization over acceleration time and
price. Profit is ``sum_j P_j (p_j - c_j)`` with the portfolio as the only
offering (no competitors).

When every consumer shares one price coefficient (MNL, NML and CTC), design
variables affect demand only through ``u_j = -beta p_j + q(a_j) + const`` with
``q(a) = theta_e / e(a) + theta_a / a``. Any design whose acceleration does
not maximize ``q(a) - beta c(a)`` can be matched in utility by one that does,
at a strictly larger margin, so the optimal acceleration per style is known
before prices are chosen and only prices remain to be optimized.
"""

from __future__ import annotations

import functools
import json
import logging
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .choice_models import ChoiceModel, CtcParams, MnlParams, NmlParams, RclParams
from .engineering import E_OFFSET, EngineeringConfig, InfeasibleDesignError, feasible_acceleration_interval
from .kernels import MixtureLogit, collapse_rules
from .population import PopulationSpec

log = logging.getLogger(__name__)

PRICE_CAP = 18.0  # 3x the market price ceiling, in $10k
EMPTY = 0  # chromosome slot category for "no vehicle"
# inner-solve stopping rule: projected gradient only (profit is flat at the optimum)
INNER_FTOL = 0.0
INNER_GTOL = 1e-10


# ---------------------------------------------------------------------------
# portfolio types


@dataclass(frozen=True)
class Vehicle:
    b: int
    e: float
    a: float
    p: float


@dataclass(frozen=True)
class Portfolio:
    """A firm's offering; styles are 0-based and vehicles are kept sorted by style."""

    vehicles: tuple

    def __post_init__(self):
        vs = tuple(sorted(self.vehicles, key=lambda v: (v.b, v.a, v.p)))
        if not vs:
            raise ValueError("a portfolio needs at least one vehicle")
        if any(v.p < 0 for v in vs):
            raise ValueError("prices must be nonnegative")
        object.__setattr__(self, "vehicles", vs)

    @classmethod
    def from_arrays(cls, styles, e, a, p) -> "Portfolio":
        return cls(tuple(Vehicle(int(b), float(x), float(y), float(z)) for b, x, y, z in zip(styles, e, a, p)))

    @property
    def n_vehicles(self):
        return len(self.vehicles)

    @property
    def styles(self):
        return np.array([v.b for v in self.vehicles], dtype=int)

    @property
    def e(self):
        return np.array([v.e for v in self.vehicles])

    @property
    def a(self):
        return np.array([v.a for v in self.vehicles])

    @property
    def p(self):
        return np.array([v.p for v in self.vehicles])

    def style_counts(self, n_styles) -> np.ndarray:
        return np.bincount(self.styles, minlength=n_styles)

    def costs(self, cfg: EngineeringConfig) -> np.ndarray:
        return np.array([cfg[v.b].cost(v.a) for v in self.vehicles], dtype=float)

    def with_prices(self, p) -> "Portfolio":
        return Portfolio.from_arrays(self.styles, self.e, self.a, p)

    def check_feasible(self, cfg: EngineeringConfig, tol=1e-10) -> None:
        """Raise if any vehicle is off its engineering curve or outside its bounds."""
        for v in self.vehicles:
            s = cfg[v.b]
            resid = 1000.0 / (v.e - E_OFFSET) - float(s.denominator(v.a))
            if abs(resid) > tol * max(1.0, abs(float(s.denominator(v.a)))):
                raise ValueError(f"vehicle {v} violates the engineering constraint (residual {resid:.3g})")
            (la, ua), (le, ue) = s.a_bounds, s.e_bounds
            if not (la - 1e-9 <= v.a <= ua + 1e-9 and le - 1e-9 <= v.e <= ue + 1e-9):
                raise ValueError(f"vehicle {v} outside its design bounds")

    def to_dict(self):
        return {"vehicles": [{**asdict(v), "b": v.b + 1} for v in self.vehicles]}

    @classmethod
    def from_dict(cls, doc):
        return cls(tuple(Vehicle(int(v["b"]) - 1, v["e"], v["a"], v["p"]) for v in doc["vehicles"]))


class Chromosome:
    """B slots, each empty (0) or a 1-based body style."""

    def __init__(self, slots, n_styles=None):
        self.slots = np.asarray(slots, dtype=int)
        n_styles = len(self.slots) if n_styles is None else n_styles
        if np.any(self.slots < 0) or np.any(self.slots > n_styles):
            raise ValueError(f"slot categories must lie in 0..{n_styles}")
        if not np.any(self.slots != EMPTY):
            raise ValueError("a chromosome needs at least one nonempty slot")

    def styles(self) -> tuple:
        """Sorted 0-based style multiset; the memoization key."""
        return tuple(sorted(int(s) - 1 for s in self.slots if s != EMPTY))

    def one_hot(self, n_styles=None) -> np.ndarray:
        """The (slots x (B+1)) binary encoding."""
        n_styles = len(self.slots) if n_styles is None else n_styles
        out = np.zeros((len(self.slots), n_styles + 1), dtype=int)
        out[np.arange(len(self.slots)), self.slots] = 1
        return out

    def __repr__(self):
        return f"Chromosome({self.slots.tolist()})"


@dataclass
class DesignOutcome:
    portfolio: Portfolio
    model_profit: float
    true_profit: float = float("nan")
    true_profit_se: float = float("nan")
    provenance: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "portfolio": self.portfolio.to_dict(),
            "model_profit": self.model_profit,
            "true_profit": self.true_profit,
            "true_profit_se": self.true_profit_se,
            "provenance": self.provenance,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            Portfolio.from_dict(doc["portfolio"]),
            doc["model_profit"],
            doc.get("true_profit", float("nan")),
            doc.get("true_profit_se", float("nan")),
            doc.get("provenance", {}),
            doc.get("diagnostics", {}),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# demand kernels: profit and its gradient in (a, p)


class _Engineering:
    """Engineering curves and costs evaluated for a fixed vector of vehicle styles."""

    _FIELDS = ("weight", "technology", "g_const", "g_a", "g_t", "g_at", "g_w", "g_wa", "c_const", "c_a", "c_t", "c_w", "c_wa")

    def __init__(self, styles, cfg: EngineeringConfig):
        self.styles = np.asarray(styles, dtype=int)
        self.cfg = cfg
        self.rows = [cfg[b] for b in self.styles]
        for name in self._FIELDS:
            setattr(self, name, np.array([getattr(r, name) for r in self.rows], dtype=float))

    def evaluate(self, a):
        """``(e, de/da, c, dc/da)`` per vehicle at accelerations ``a``."""
        a = np.asarray(a, dtype=float)
        w, t = self.weight, self.technology
        ex = np.exp(-a)
        D = self.g_const + self.g_a * ex + self.g_t * t + self.g_at * a * a * t + self.g_w * w + self.g_wa * w * a
        if np.any(D <= 0):
            bad = int(np.argmax(D <= 0))
            raise InfeasibleDesignError(f"no feasible fuel economy at a={a[bad]}, body style {self.styles[bad]}")
        dD = -self.g_a * ex + 2.0 * self.g_at * a * t + self.g_wa * w
        e = E_OFFSET + 1000.0 / D
        de = -1000.0 * dD / (D * D)
        c = self.c_const + self.c_a * ex + self.c_t * t + self.c_w * w + self.c_wa * w * a
        dc = -self.c_a * ex + self.c_wa * w
        return e, de, c, dc


class LinearUtilityDemand:
    """Demand from utilities ``-exp(th_p) p + th_e / e + th_a / a + th_0 + th_b[b]`` mixed over draws.

    Parameters
    ----------
    coefs : (I, 4) array of (log price coefficient, th_e, th_a, th_0) per draw.
    style_effects : (I, B) array or None.
    kernel : MixtureLogit over the portfolio's styles.
    """

    def __init__(self, styles, coefs, style_effects, kernel: MixtureLogit, cfg: EngineeringConfig):
        self.styles = np.asarray(styles, dtype=int)
        self.coefs = np.atleast_2d(np.asarray(coefs, dtype=float))
        self.beta = np.exp(self.coefs[:, 0])
        self.offset = self.coefs[:, 3:4] + (0.0 if style_effects is None else np.atleast_2d(style_effects)[:, self.styles])
        self.kernel = kernel
        self.eng = _Engineering(self.styles, cfg)

    def _utilities(self, e, a, p):
        th_e, th_a = self.coefs[:, 1:2], self.coefs[:, 2:3]
        return -self.beta[:, None] * p + th_e / e + th_a / a + self.offset

    def shares(self, a, p, per_draw=False):
        e = self.eng.evaluate(np.asarray(a, dtype=float))[0]
        return self.kernel.probabilities(self._utilities(e, a, p), per_draw=per_draw)

    def profit(self, a, p, gradient=True):
        a = np.asarray(a, dtype=float)
        p = np.asarray(p, dtype=float)
        e, de, c, dc = self.eng.evaluate(a)
        m = p - c
        u = self._utilities(e, a, p)
        if not gradient:
            P = self.kernel.probabilities(u)
            return float(P[1:] @ m)
        P, G = self.kernel.revenue_vjp(u, m)
        th_e, th_a = self.coefs[:, 1:2], self.coefs[:, 2:3]
        du_da = -th_e * de / e**2 - th_a / a**2
        g_p = P[1:] - self.beta @ G
        g_a = -P[1:] * dc + np.einsum("ij,ij->j", G, du_da)
        return float(P[1:] @ m), g_a, g_p

    def profit_per_draw(self, a, p):
        e, _, c, _ = self.eng.evaluate(np.asarray(a, dtype=float))
        P = self.kernel.probabilities(self._utilities(e, a, p), per_draw=True)
        return P[:, 1:] @ (np.asarray(p) - c)


class NestedLogitDemand:
    """Daly nested-logit demand with nests given by the portfolio's body styles."""

    def __init__(self, styles, params: NmlParams, cfg: EngineeringConfig):
        self.styles = np.asarray(styles, dtype=int)
        self.params = params
        self.beta = np.array([np.exp(params.theta_p)])
        self.nests, self.nest_of = np.unique(self.styles, return_inverse=True)
        self.onehot = (self.nest_of[:, None] == np.arange(len(self.nests))).astype(float)  # (J, N)
        self.lam = params.lam[self.nests]
        self.const = params.theta_0 + params.theta_b[self.nests]
        self.eng = _Engineering(self.styles, cfg)

    def _probs(self, u):
        shift = np.full(len(self.nests), -np.inf)
        np.maximum.at(shift, self.nest_of, u)  # per-nest max, so every nest sum is >= 1
        x = np.exp(u - shift[self.nest_of])
        S = x @ self.onehot
        V = shift + np.log(S)
        W = self.const + self.lam * V
        wmax = max(W.max(), 0.0)
        expW = np.exp(W - wmax)
        den = np.exp(-wmax) + expW.sum()
        Pn = expW / den
        cond = x / S[self.nest_of]
        return np.exp(-wmax) / den, Pn, cond

    def _utilities(self, e, a, p):
        pr = self.params
        return -self.beta[0] * p + pr.theta_e / e + pr.theta_a / a

    def shares(self, a, p, per_draw=False):
        e = self.eng.evaluate(np.asarray(a, dtype=float))[0]
        P0, Pn, cond = self._probs(self._utilities(e, a, p))
        out = np.concatenate([[P0], cond * Pn[self.nest_of]])
        return out[None] if per_draw else out

    def profit(self, a, p, gradient=True):
        a = np.asarray(a, dtype=float)
        p = np.asarray(p, dtype=float)
        e, de, c, dc = self.eng.evaluate(a)
        m = p - c
        u = self._utilities(e, a, p)
        P0, Pn, cond = self._probs(u)
        P = cond * Pn[self.nest_of]
        R = float(P @ m)
        if not gradient:
            return R
        Rb = (P * m) @ self.onehot
        k = self.nest_of
        g_u = m * P + cond * ((self.lam[k] - 1.0) * Rb[k] - self.lam[k] * Pn[k] * R)
        pr = self.params
        du_da = -pr.theta_e * de / e**2 - pr.theta_a / a**2
        return R, -P * dc + g_u * du_da, P - self.beta[0] * g_u

    def profit_per_draw(self, a, p):
        return np.array([self.profit(a, p, gradient=False)])


def model_demand(model: ChoiceModel, styles, cfg: EngineeringConfig):
    """Demand kernel of a fitted model for a portfolio with the given styles."""
    styles = np.asarray(styles, dtype=int)
    B = model.n_styles
    if isinstance(model, MnlParams):
        coefs = [[model.theta_p, model.theta_e, model.theta_a, model.theta_0]]
        kernel = MixtureLogit(styles, np.ones((1, B), dtype=bool), [1.0])
        return LinearUtilityDemand(styles, coefs, model.theta_b[None, :], kernel, cfg)
    if isinstance(model, CtcParams):
        coefs = [[model.theta_p, model.theta_e, model.theta_a, model.theta_0]]
        patterns, mass, null = collapse_rules(model.rules, model.alpha, np.unique(styles))
        return LinearUtilityDemand(styles, coefs, None, MixtureLogit(styles, patterns, mass, null), cfg)
    if isinstance(model, RclParams):
        draws = model.coefficient_draws()
        kernel = MixtureLogit(styles, np.ones((1, B), dtype=bool), [1.0])
        return LinearUtilityDemand(styles, draws[:, :4], draws[:, 4:], kernel, cfg)
    if isinstance(model, NmlParams):
        return NestedLogitDemand(styles, model, cfg)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def truth_demand(pop: PopulationSpec, styles, normals, cfg: EngineeringConfig):
    """True-behavior demand with Monte Carlo coefficient draws built from ``normals`` (I, 4)."""
    styles = np.asarray(styles, dtype=int)
    patterns, mass, null = collapse_rules(pop.rules, pop.alpha, np.unique(styles))
    kernel = MixtureLogit(styles, patterns, mass, null)
    return LinearUtilityDemand(styles, pop.coefficients_from_normals(normals), None, kernel, cfg)


def truth_normals(n_draws, seed) -> np.ndarray:
    """Standard-normal draws for the true-behavior Monte Carlo, shared across portfolios."""
    return np.random.default_rng(seed).standard_normal((n_draws, 4))


def _homogeneous_coefficients(model):
    """(beta, th_e, th_a) when every consumer shares them, else None."""
    if isinstance(model, (MnlParams, CtcParams, NmlParams)):
        return np.exp(model.theta_p), model.theta_e, model.theta_a
    return None


# ---------------------------------------------------------------------------
# inner problem


@dataclass
class InnerResult:
    portfolio: Portfolio
    profit: float
    price_cap_active: bool = False
    n_starts: int = 1


@functools.lru_cache(maxsize=4096)
def best_acceleration(b, beta, th_e, th_a, cfg: EngineeringConfig, n_grid=801) -> float:
    """argmax over the feasible interval of ``th_e / e(a) + th_a / a - beta * c(a)``."""
    lo, hi = feasible_acceleration_interval(b, cfg)
    s = cfg[b]

    def value(a):
        e = E_OFFSET + 1000.0 / s.denominator(a)
        return th_e / e + th_a / a - beta * s.cost(a)

    grid = np.linspace(lo, hi, n_grid)
    v = value(grid)
    i = int(np.argmax(v))
    left, right = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]
    if right - left <= 0:
        return float(grid[i])
    res = minimize_scalar(lambda a: -value(a), bounds=(left, right), method="bounded", options={"xatol": 1e-12})
    return float(res.x) if -res.fun >= v[i] else float(grid[i])


def _common_margin(demand, a, c, upper):
    """Best single margin shared by all vehicles (coarse grid, then bounded refinement)."""
    grid = np.linspace(0.0, upper, 61)
    vals = [demand.profit(a, c + m, gradient=False) for m in grid]
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(lambda m: -demand.profit(a, c + m, gradient=False), bounds=(lo, hi), method="bounded")
    return float(res.x) if -res.fun >= vals[i] else float(grid[i])


def _optimize(demand, a0, m0, a_bounds, optimize_a=True, min_margin=0.0, max_iterations=1000, gtol=INNER_GTOL):
    """L-BFGS-B on -profit over (a, margin) or margins only; prices are ``c(a) + margin``.

    Returns ``(a, p, profit)``; never worse than the starting point.
    """
    a0 = np.asarray(a0, dtype=float)
    m0 = np.asarray(m0, dtype=float)
    J = len(m0)
    eng = demand.eng
    c0 = eng.evaluate(a0)[2]
    if optimize_a:
        c_hi = np.array([max(float(s.cost(lo)), float(s.cost(hi))) for s, (lo, hi) in zip(eng.rows, a_bounds)])
    else:
        c_hi = c0
    lower = np.broadcast_to(np.asarray(min_margin, dtype=float), (J,))
    m_bounds = [(lo, max(lo, PRICE_CAP - ch)) for lo, ch in zip(lower, c_hi)]
    m0 = np.clip(m0, [b[0] for b in m_bounds], [b[1] for b in m_bounds])
    if optimize_a:
        x0 = np.concatenate([a0, m0])
        bounds = list(a_bounds) + m_bounds

        def f(x):
            a, m = x[:J], x[J:]
            _, _, c, dc = eng.evaluate(a)
            pi, g_a, g_p = demand.profit(a, c + m)
            return -pi, -np.concatenate([g_a + g_p * dc, g_p])

    else:
        x0 = m0
        bounds = m_bounds

        def f(x):
            pi, _, g_p = demand.profit(a0, c0 + x)
            return -pi, -g_p

    f0 = f(x0)[0]
    res = minimize(f, x0, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxiter": max_iterations, "ftol": INNER_FTOL, "gtol": gtol})
    x = res.x if res.fun <= f0 else x0
    if optimize_a:
        a = x[:J]
        p = eng.evaluate(a)[2] + x[J:]
    else:
        a, p = a0, c0 + x
    return a, np.maximum(p, 0.0), -float(min(res.fun, f0))


def _finish(styles, a, p, profit, cfg, n_starts):
    e = _Engineering(styles, cfg).evaluate(a)[0]
    cap = bool(np.any(p >= PRICE_CAP - 1e-9))
    if cap:
        log.debug("price cap %.1f active for styles %s", PRICE_CAP, tuple(int(b) for b in styles))
    return InnerResult(Portfolio.from_arrays(styles, e, a, p), profit, cap, n_starts)


def _multiset_seed(styles, seed):
    return [seed, zlib.crc32(bytes(np.asarray(styles, dtype=np.uint8)))]


def inner_optimize(
    styles, model, cfg: EngineeringConfig, n_starts=5, seed=0, demand=None, gtol=INNER_GTOL, optimize_a=True
) -> InnerResult:
    """Best (a, p) for a fixed multiset of body styles under ``model``.

    ``model`` is a fitted :data:`ChoiceModel`; pass ``demand`` instead to use
    any object with a ``profit(a, p)`` method (e.g. the true behavior).
    Results do not depend on the order of ``styles``. ``gtol`` is the
    projected-gradient stopping tolerance of each local solve. With
    ``optimize_a=False`` a heterogeneous model keeps the accelerations that
    are optimal at its mean coefficients and only prices are optimized (a
    cheap lower bound used to rank multisets).
    """
    styles = np.sort(np.asarray(styles, dtype=int))
    if len(styles) == 0:
        raise ValueError("need at least one body style")
    intervals = [feasible_acceleration_interval(b, cfg) for b in styles]
    if demand is None:
        demand = model_demand(model, styles, cfg)
        homo = _homogeneous_coefficients(model)
    else:
        homo = None
    if homo is not None:
        beta, th_e, th_a = homo
        a_best = {b: best_acceleration(b, beta, th_e, th_a, cfg) for b in np.unique(styles)}
        a = np.array([a_best[b] for b in styles])
        c = demand.eng.evaluate(a)[2]
        m0 = np.full(len(styles), _common_margin(demand, a, c, PRICE_CAP - c.max()))
        a, p, pi = _optimize(demand, a, m0, intervals, optimize_a=False, gtol=gtol)
        return _finish(styles, a, p, pi, cfg, 1)

    rng = np.random.default_rng(_multiset_seed(styles, seed))
    starts = []
    th = getattr(demand, "coefs", None)
    if th is not None:
        mean = th.mean(axis=0)
        a_best = {b: best_acceleration(b, np.exp(mean[0]), mean[1], mean[2], cfg) for b in np.unique(styles)}
        starts.append(np.array([a_best[b] for b in styles]))
    if not optimize_a and starts:
        a0 = starts[0]
        c = demand.eng.evaluate(a0)[2]
        m0 = np.full(len(styles), _common_margin(demand, a0, c, PRICE_CAP - c.max()))
        a, p, pi = _optimize(demand, a0, m0, intervals, optimize_a=False, gtol=gtol)
        return _finish(styles, a, p, pi, cfg, 1)
    while len(starts) < n_starts:
        starts.append(np.array([rng.uniform(lo, hi) for lo, hi in intervals]))
    best = None
    for k, a0 in enumerate(starts):
        c = demand.eng.evaluate(a0)[2]
        m0 = np.full(len(styles), _common_margin(demand, a0, c, PRICE_CAP - c.max()))
        if k:
            m0 *= 1.0 + rng.uniform(-0.2, 0.2, len(styles))
        a, p, pi = _optimize(demand, a0, m0, intervals, gtol=gtol)
        if best is None or pi > best[2]:
            best = (a, p, pi)
    return _finish(styles, *best, cfg, len(starts))


# ---------------------------------------------------------------------------
# outer problem


@dataclass
class GAOptions:
    population_size: int = 60
    tournament_size: int = 3
    crossover_rate: float = 0.9
    mutation_rate: float | None = None  # default 1/B
    elitism: int = 2
    max_generations: int = 100
    min_generations: int = 20
    stall_generations: int = 15
    inner_starts: int = 1
    polish_starts: int = 5
    n_polish: int = 3
    search_gtol: float = 1e-6
    search_optimize_a: bool = False  # rank multisets with mean-optimal accelerations
    search_draws: int = 200  # RCL draws used while searching; polishing uses all

    def __post_init__(self):
        if self.population_size < 2 or self.tournament_size < 1 or self.elitism < 0:
            raise ValueError("invalid GA sizes")
        if not 0 <= self.crossover_rate <= 1:
            raise ValueError("crossover rate must lie in [0, 1]")
        if self.max_generations < 1 or self.min_generations < 0 or self.stall_generations < 1:
            raise ValueError("invalid generation limits")
        if self.search_gtol <= 0 or self.search_draws < 1 or self.polish_starts < 1 or self.n_polish < 1:
            raise ValueError("invalid search settings")


class FitnessCache:
    """Inner-problem results memoized by sorted style multiset."""

    def __init__(self, evaluate):
        self._evaluate = evaluate
        self.results: dict[tuple, InnerResult] = {}
        self.n_calls = 0
        self.n_evaluations = 0

    def __call__(self, key: tuple) -> InnerResult:
        key = tuple(sorted(key))
        self.n_calls += 1
        if key not in self.results:
            self.n_evaluations += 1
            self.results[key] = self._evaluate(key)
        return self.results[key]

    def ranked(self):
        return sorted(self.results.items(), key=lambda kv: (-kv[1].profit, kv[0]))


@dataclass
class GAResult:
    best: InnerResult
    best_styles: tuple
    generations: int
    converged: bool
    best_history: list
    mean_history: list
    cache: FitnessCache


def _repair(slots, n_styles, rng):
    if not np.any(slots != EMPTY):
        slots[rng.integers(len(slots))] = rng.integers(1, n_styles + 1)
    return slots


def genetic_search(evaluate, n_styles, options: GAOptions, rng: np.random.Generator, n_slots=None) -> GAResult:
    """Generational GA over slot chromosomes maximizing ``evaluate(styles).profit``.

    Stops after ``max_generations`` or once the best fitness has not improved
    for ``stall_generations`` generations (and at least ``min_generations``
    have run).
    """
    n_slots = n_styles if n_slots is None else n_slots
    cache = evaluate if isinstance(evaluate, FitnessCache) else FitnessCache(evaluate)
    mut = options.mutation_rate if options.mutation_rate is not None else 1.0 / n_slots
    n_pop = options.population_size

    pop = [_repair(rng.integers(0, n_styles + 1, n_slots), n_styles, rng) for _ in range(n_pop)]

    def fitness(slots):
        return cache(Chromosome(slots, n_styles).styles()).profit

    fit = np.array([fitness(s) for s in pop])
    best_hist, mean_hist = [float(fit.max())], [float(fit.mean())]
    stall, converged, gen = 0, False, 0
    for gen in range(1, options.max_generations + 1):
        order = np.argsort(-fit, kind="stable")
        children = [pop[i].copy() for i in order[: options.elitism]]
        while len(children) < n_pop:
            parents = []
            for _ in range(2):
                contenders = rng.integers(0, n_pop, options.tournament_size)
                parents.append(pop[contenders[np.argmax(fit[contenders])]])
            c1, c2 = parents[0].copy(), parents[1].copy()
            if rng.random() < options.crossover_rate:
                swap = rng.random(n_slots) < 0.5
                c1[swap], c2[swap] = parents[1][swap], parents[0][swap]
            for c in (c1, c2):
                hit = rng.random(n_slots) < mut
                c[hit] = rng.integers(0, n_styles + 1, int(hit.sum()))
                children.append(_repair(c, n_styles, rng))
        pop = children[:n_pop]
        fit = np.array([fitness(s) for s in pop])
        best_hist.append(float(fit.max()))
        mean_hist.append(float(fit.mean()))
        stall = stall + 1 if best_hist[-1] <= best_hist[-2] + 1e-12 * abs(best_hist[-2]) else 0
        if gen >= options.min_generations and stall >= options.stall_generations:
            converged = True
            break
    key, best = cache.ranked()[0]
    return GAResult(best, key, gen, converged, best_hist, mean_hist, cache)


def outer_optimize(model, cfg: EngineeringConfig, ga_options: GAOptions | None = None, rng=None, seed=0, provenance=None) -> DesignOutcome:
    """GA over portfolio composition with the model's inner optimum as fitness."""
    ga_options = ga_options or GAOptions()
    rng = np.random.default_rng(rng)
    n_styles = model.n_styles
    search_model = _search_model(model, ga_options.search_draws)
    cache = FitnessCache(
        lambda key: inner_optimize(
            key, search_model, cfg, ga_options.inner_starts, seed, gtol=ga_options.search_gtol, optimize_a=ga_options.search_optimize_a
        )
    )
    res = genetic_search(cache, n_styles, ga_options, rng)
    best = _polish(res, lambda key: inner_optimize(key, model, cfg, ga_options.polish_starts, seed), ga_options.n_polish)
    _warn_cap(best)
    return DesignOutcome(
        best.portfolio,
        best.profit,
        provenance={"model": model.kind, **(provenance or {})},
        diagnostics=_ga_diagnostics(res, best),
    )


def _search_model(model, n_draws):
    """The model used for GA fitness: an RCL model keeps only its first ``n_draws`` draws."""
    if isinstance(model, RclParams) and model.n_draws > n_draws:
        return replace(model, n_draws=n_draws)
    return model


def _polish(res: GAResult, solve, n_polish, extra=()):
    """Re-solve the best ``n_polish`` multisets (plus ``extra``) with a more thorough inner search."""
    keys = [k for k, _ in res.cache.ranked()[:n_polish]]
    keys += [tuple(sorted(k)) for k in extra if tuple(sorted(k)) not in keys]
    best = None
    for key in keys:
        r = solve(key)
        if best is None or r.profit > best.profit:
            best = r
    return best


def _warn_cap(best: InnerResult):
    if best.price_cap_active:
        log.warning("price cap %.1f active in the returned design %s", PRICE_CAP, tuple(int(b) for b in best.portfolio.styles))


def _ga_diagnostics(res: GAResult, best: InnerResult):
    return {
        "generations": res.generations,
        "ga_converged": res.converged,
        "evaluations": res.cache.n_evaluations,
        "fitness_calls": res.cache.n_calls,
        "price_cap_active": best.price_cap_active,
    }


# ---------------------------------------------------------------------------
# true behavior


def true_profit(portfolio: Portfolio, pop: PopulationSpec, cfg: EngineeringConfig, n_draws=10_000, seed=0, normals=None):
    """Expected profit under the true behavior and its Monte Carlo standard error."""
    normals = truth_normals(n_draws, seed) if normals is None else normals
    demand = truth_demand(pop, portfolio.styles, normals, cfg)
    per_draw = demand.profit_per_draw(portfolio.a, portfolio.p)
    se = float(per_draw.std(ddof=1) / np.sqrt(len(per_draw))) if len(per_draw) > 1 else 0.0
    return float(per_draw.mean()), se


def price_on_offering(portfolio: Portfolio, pop: PopulationSpec, cfg: EngineeringConfig, n_draws=10_000, seed=0, normals=None):
    """Re-price a fixed engineering design to maximize true expected profit.

    The search starts from the portfolio's own prices and the original
    prices are kept if the optimizer does not improve on them, so under the
    same draws the result never falls below the original true profit.
    """
    normals = truth_normals(n_draws, seed) if normals is None else normals
    demand = truth_demand(pop, portfolio.styles, normals, cfg)
    a, p0 = portfolio.a, portfolio.p
    before = demand.profit(a, p0, gradient=False)
    c = portfolio.costs(cfg)
    _, p, after = _optimize(demand, a, p0 - c, None, optimize_a=False, min_margin=-c)
    if not after > before:
        p = p0
    repriced = portfolio.with_prices(p)
    return repriced, true_profit(repriced, pop, cfg, normals=normals)[0]


_IDEAL_CACHE: dict = {}


def ideal_design(
    pop: PopulationSpec,
    cfg: EngineeringConfig,
    ga_options: GAOptions | None = None,
    seed=0,
    search_draws=500,
    final_draws=10_000,
    n_polish=5,
    extra_candidates=(),
) -> DesignOutcome:
    """Portfolio optimized against the true behavior.

    The GA runs with ``search_draws`` Monte Carlo draws; the ``n_polish``
    best style multisets it found (plus any ``extra_candidates``) are then
    re-optimized with ``final_draws`` draws and ``polish_starts`` starts, and
    the best is returned. Results are cached per (population, config,
    options, seed).
    """
    ga_options = ga_options or GAOptions()
    key = (pop.fingerprint(), cfg.fingerprint(), repr(ga_options), seed, search_draws, final_draws, n_polish, tuple(sorted(map(tuple, extra_candidates))))
    if key in _IDEAL_CACHE:
        return _IDEAL_CACHE[key]
    ss = np.random.SeedSequence([seed, zlib.crc32(b"ideal")])
    ga_seed, search_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    search_normals = truth_normals(search_draws, search_seed)
    # same draws as true_profit(..., seed=seed) so comparisons share random numbers
    final_normals = truth_normals(final_draws, seed)

    def evaluate(styles):
        d = truth_demand(pop, styles, search_normals, cfg)
        return inner_optimize(
            styles, None, cfg, ga_options.inner_starts, seed, demand=d, gtol=ga_options.search_gtol, optimize_a=ga_options.search_optimize_a
        )

    res = genetic_search(FitnessCache(evaluate), pop.n_styles, ga_options, np.random.default_rng(ga_seed))

    def polish(styles):
        d = truth_demand(pop, styles, final_normals, cfg)
        return inner_optimize(styles, None, cfg, ga_options.polish_starts, seed, demand=d)

    best = _polish(res, polish, n_polish, extra_candidates)
    _warn_cap(best)
    profit, se = true_profit(best.portfolio, pop, cfg, normals=final_normals)
    out = DesignOutcome(
        best.portfolio,
        best.profit,
        profit,
        se,
        provenance={"model": "truth", "seed": seed},
        diagnostics=_ga_diagnostics(res, best),
    )
    _IDEAL_CACHE[key] = out
    return out
