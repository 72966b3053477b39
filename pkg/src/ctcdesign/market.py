"""Random markets, simulated aggregate shares and the true choice probabilities.

Prices are in $10k throughout (market range [1.0, 6.0]); body styles are
0-based indices internally and 1-based in CSV files. Share and probability
vectors carry the outside good at index 0.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernels import MixtureLogit, collapse_rules, style_onehot
from .population import N_STYLES, PopulationSpec, utilities

E_RANGE = (5.0, 50.0)
A_RANGE = (2.0, 15.0)
P_RANGE = (1.0, 6.0)


@dataclass(frozen=True)
class VehicleProfile:
    e: float
    a: float
    p: float
    b: int

    def __post_init__(self):
        if not E_RANGE[0] <= self.e <= E_RANGE[1]:
            raise ValueError(f"fuel economy {self.e} outside {E_RANGE}")
        if not A_RANGE[0] <= self.a <= A_RANGE[1]:
            raise ValueError(f"acceleration {self.a} outside {A_RANGE}")
        if not P_RANGE[0] <= self.p <= P_RANGE[1]:
            raise ValueError(f"price {self.p} outside {P_RANGE}")


@dataclass
class Market:
    """One market's universal choice set as attribute arrays of length J."""

    e: np.ndarray
    a: np.ndarray
    p: np.ndarray
    b: np.ndarray
    market_id: int = 0

    def __post_init__(self):
        self.e = np.asarray(self.e, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        self.b = np.asarray(self.b, dtype=int)
        n = len(self.e)
        if n < 1 or not (len(self.a) == len(self.p) == len(self.b) == n):
            raise ValueError("a market needs J >= 1 vehicles with matching attribute arrays")
        if np.any(self.e <= 0) or np.any(self.a <= 0):
            raise ValueError("fuel economy and acceleration must be positive")
        if np.any(self.b < 0):
            raise ValueError("body styles are 0-based nonnegative indices")

    @property
    def n_vehicles(self) -> int:
        return len(self.e)

    @classmethod
    def from_profiles(cls, profiles, market_id=0) -> "Market":
        return cls(
            [v.e for v in profiles],
            [v.a for v in profiles],
            [v.p for v in profiles],
            [v.b for v in profiles],
            market_id,
        )

    def profiles(self) -> list[VehicleProfile]:
        return [VehicleProfile(*map(float, t[:3]), int(t[3])) for t in zip(self.e, self.a, self.p, self.b)]


@dataclass
class MarketBatch:
    """Markets padded to a common J for vectorized likelihood evaluation."""

    inv_e: np.ndarray  # (M, J)
    inv_a: np.ndarray
    p: np.ndarray
    b: np.ndarray  # (M, J) int, 0 where padded
    mask: np.ndarray  # (M, J) bool
    n_styles: int
    onehot: np.ndarray = field(init=False)  # (M, J, B), zero where padded

    def __post_init__(self):
        self.onehot = style_onehot(self.b, self.n_styles) * self.mask[..., None]

    @property
    def n_markets(self) -> int:
        return self.p.shape[0]


def stack_markets(markets, n_styles=N_STYLES) -> MarketBatch:
    M = len(markets)
    J = max(m.n_vehicles for m in markets)
    inv_e = np.ones((M, J))
    inv_a = np.ones((M, J))
    p = np.zeros((M, J))
    b = np.zeros((M, J), dtype=int)
    mask = np.zeros((M, J), dtype=bool)
    for i, m in enumerate(markets):
        n = m.n_vehicles
        if np.any(m.b >= n_styles):
            raise ValueError(f"market {m.market_id} has a body style >= {n_styles}")
        inv_e[i, :n] = 1.0 / m.e
        inv_a[i, :n] = 1.0 / m.a
        p[i, :n] = m.p
        b[i, :n] = m.b
        mask[i, :n] = True
    return MarketBatch(inv_e, inv_a, p, b, mask, n_styles)


def stack_shares(shares, J=None) -> np.ndarray:
    """Pad per-market share vectors (outside first) to an (M, J+1) array."""
    J = J if J is not None else max(len(s) for s in shares) - 1
    out = np.zeros((len(shares), J + 1))
    for i, s in enumerate(shares):
        out[i, : len(s)] = s
    return out


def generate_market(rng: np.random.Generator, n_vehicles: int, n_styles: int = N_STYLES, market_id: int = 0) -> Market:
    """Draw ``n_vehicles`` i.i.d. uniform profiles on the market attribute ranges."""
    if n_vehicles < 1:
        raise ValueError("a market needs at least one vehicle")
    e = rng.uniform(*E_RANGE, size=n_vehicles)
    a = rng.uniform(*A_RANGE, size=n_vehicles)
    p = rng.uniform(*P_RANGE, size=n_vehicles)
    b = rng.integers(0, n_styles, size=n_vehicles)
    return Market(e, a, p, b, market_id)


def generate_markets(rng, n_markets, n_vehicles, n_styles=N_STYLES, start_id=0):
    return [generate_market(rng, n_vehicles, n_styles, start_id + i) for i in range(n_markets)]


def simulate_shares(market: Market, pop: PopulationSpec, n_individuals: int, rng: np.random.Generator) -> np.ndarray:
    """Choice frequencies of ``n_individuals`` random-utility maximizers.

    Each individual draws a screening rule and coefficients, then chooses
    the best of their considered vehicles and the outside good after adding
    zero-mean Gumbel errors (location -Euler gamma, scale 1).
    """
    if n_individuals < 1:
        raise ValueError("need at least one individual")
    rule_idx, coefs = _draw_population(rng, pop, n_individuals)
    noise = rng.gumbel(loc=-np.euler_gamma, scale=1.0, size=(n_individuals, market.n_vehicles + 1))
    U = np.empty_like(noise)
    U[:, 0] = noise[:, 0]
    U[:, 1:] = utilities(market.e, market.a, market.p, coefs) + noise[:, 1:]
    considered = pop.rules[rule_idx][:, market.b]  # (N, J)
    U[:, 1:][~considered] = -np.inf
    choice = np.argmax(U, axis=1)
    counts = np.bincount(choice, minlength=market.n_vehicles + 1)
    return counts / n_individuals


def _draw_population(rng, pop, n):
    rule_idx = rng.choice(len(pop.alpha), size=n, p=pop.alpha)
    coefs = pop.draw_coefficients(rng, n)
    return rule_idx, coefs


def true_choice_probability(market: Market, pop: PopulationSpec, n_draws: int = 10_000, rng=None, normals=None) -> np.ndarray:
    """Population choice probabilities (outside first) by Monte Carlo over coefficients.

    ``sum_s alpha(s) E_theta[logit(j | C_s, theta)]`` with the same coefficient
    draws for every rule. Pass ``normals`` (I, 4) to reuse standard-normal
    draws across calls.
    """
    if normals is None:
        if n_draws < 1:
            raise ValueError("need at least one Monte Carlo draw")
        rng = np.random.default_rng(rng)
        normals = rng.standard_normal((n_draws, 4))
    coefs = pop.coefficients_from_normals(normals)
    return truth_kernel(market.b, pop).probabilities(utilities(market.e, market.a, market.p, coefs))


def truth_kernel(styles, pop: PopulationSpec) -> MixtureLogit:
    patterns, mass, null_mass = collapse_rules(pop.rules, pop.alpha, np.unique(styles))
    return MixtureLogit(styles, patterns, mass, null_mass)


# ---------------------------------------------------------------------------
# persistence


CSV_FIELDS = ("market_id", "j", "e", "a", "p", "b", "share")


def write_shares_csv(path, markets, shares) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for m, s in zip(markets, shares):
            w.writerow([m.market_id, 0, "", "", "", "", repr(float(s[0]))])
            for j in range(m.n_vehicles):
                w.writerow(
                    [
                        m.market_id,
                        j + 1,
                        repr(float(m.e[j])),
                        repr(float(m.a[j])),
                        repr(float(m.p[j])),
                        int(m.b[j]) + 1,
                        repr(float(s[j + 1])),
                    ]
                )


def read_shares_csv(path):
    rows: dict[int, dict] = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            mid = int(r["market_id"])
            d = rows.setdefault(mid, {"vehicles": [], "outside": None})
            if int(r["j"]) == 0:
                d["outside"] = float(r["share"])
            else:
                d["vehicles"].append(
                    (int(r["j"]), float(r["e"]), float(r["a"]), float(r["p"]), int(r["b"]) - 1, float(r["share"]))
                )
    markets, shares = [], []
    for mid in sorted(rows):
        d = rows[mid]
        vs = sorted(d["vehicles"])
        markets.append(Market([v[1] for v in vs], [v[2] for v in vs], [v[3] for v in vs], [v[4] for v in vs], mid))
        shares.append(np.array([d["outside"]] + [v[5] for v in vs]))
    return markets, shares


def write_bundle(path, markets, shares, seed=None, **meta) -> None:
    doc = {
        "seed": seed,
        **meta,
        "markets": [
            {
                "market_id": int(m.market_id),
                "e": m.e.tolist(),
                "a": m.a.tolist(),
                "p": m.p.tolist(),
                "b": m.b.tolist(),
                "shares": np.asarray(s).tolist(),
            }
            for m, s in zip(markets, shares)
        ],
    }
    Path(path).write_text(json.dumps(doc))


def read_bundle(path):
    doc = json.loads(Path(path).read_text())
    markets = [Market(d["e"], d["a"], d["p"], d["b"], d["market_id"]) for d in doc["markets"]]
    shares = [np.array(d["shares"]) for d in doc["markets"]]
    return markets, shares, doc
