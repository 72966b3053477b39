"""Synthetic "true" consumer behavior: body-style screening plus random utility."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

BODY_STYLES = (
    "sports_car",
    "hatchback",
    "compact_sedan",
    "standard_sedan",
    "crossover",
    "small_suv",
    "full_size_suv",
    "pickup_truck",
    "minivan",
)
N_STYLES = len(BODY_STYLES)

# (price, fuel economy, acceleration, constant)
COEF_NAMES = ("price", "fuel_economy", "acceleration", "constant")

TABLE2_ACCEPTANCE = np.array([0.16, 0.19, 0.38, 0.42, 0.38, 0.39, 0.29, 0.18, 0.10])
TABLE3_MEANS = np.array([2.0, -36.8, 11.3, -23.2])
TABLE3_SPREADS = np.array([0.1, 2.2, 0.3, 0.5])

# Constant with the sign flipped; see calibrated_population().
CALIBRATED_CONSTANT = 23.2

MIN_RULE_MASS = 1e-6


@dataclass(frozen=True)
class ScreeningRule:
    """Binary acceptability vector over body styles (style ``b`` accepted iff ``bits[b]``)."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if not any(self.bits):
            raise ValueError("the null screening rule (no acceptable style) is excluded")
        if any(v not in (0, 1) for v in self.bits):
            raise ValueError(f"screening rule bits must be 0/1, got {self.bits}")

    @classmethod
    def from_string(cls, s: str) -> "ScreeningRule":
        return cls(tuple(int(c) for c in s.strip()))

    def __str__(self) -> str:
        return "".join(str(v) for v in self.bits)

    def considers(self, style: int) -> bool:
        return bool(self.bits[style])


@dataclass(frozen=True)
class CoefficientDraw:
    theta_p: float
    theta_e: float
    theta_a: float
    theta_0: float

    def as_array(self) -> np.ndarray:
        return np.array([self.theta_p, self.theta_e, self.theta_a, self.theta_0])


class PopulationSpec:
    """Screening-rule mass function plus independent normal utility coefficients.

    Parameters
    ----------
    rules : array-like of shape (R, B)
        Binary screening rules, one per row.
    alpha : array-like of shape (R,)
        Population fraction using each rule.
    coeff_means, coeff_sds : array-like of shape (4,)
        Mean and standard deviation of (price, fuel economy, acceleration,
        constant) coefficients. The price coefficient enters as
        ``-exp(theta_p) * p``.
    """

    def __init__(self, rules, alpha, coeff_means, coeff_sds):
        rules = np.asarray(rules, dtype=bool)
        alpha = np.asarray(alpha, dtype=float)
        if rules.ndim != 2 or rules.shape[0] != alpha.shape[0]:
            raise ValueError("rules must be (R, B) with one alpha per rule")
        if np.any(~rules.any(axis=1)):
            raise ValueError("the null screening rule may not carry mass")
        if np.any(alpha < 0) or abs(alpha.sum() - 1.0) > 1e-12:
            raise ValueError("alpha must be nonnegative and sum to 1")
        if len({r.tobytes() for r in rules}) != len(rules):
            raise ValueError("duplicate screening rules")
        covered = rules[alpha > 0].any(axis=0)
        if not covered.all():
            missing = np.flatnonzero(~covered).tolist()
            raise ValueError(f"body styles {missing} are acceptable under no rule")
        self.rules = rules
        self.alpha = alpha
        self.coeff_means = np.asarray(coeff_means, dtype=float).reshape(4)
        self.coeff_sds = np.asarray(coeff_sds, dtype=float).reshape(4)
        if np.any(self.coeff_sds < 0) or not np.all(np.isfinite(self.coeff_means)):
            raise ValueError("coefficient sds must be >= 0 and means finite")

    @property
    def n_styles(self) -> int:
        return self.rules.shape[1]

    def marginal_acceptance(self) -> np.ndarray:
        return self.alpha @ self.rules

    def draw_coefficients(self, rng: np.random.Generator, size: int) -> np.ndarray:
        z = rng.standard_normal((size, 4))
        return self.coefficients_from_normals(z)

    def coefficients_from_normals(self, z: np.ndarray) -> np.ndarray:
        return self.coeff_means + self.coeff_sds * z

    def fingerprint(self) -> str:
        """Stable text digest used for caching."""
        import hashlib

        h = hashlib.sha256()
        for arr in (self.rules.astype(np.uint8), self.alpha, self.coeff_means, self.coeff_sds):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "alpha": [
                ["".join("1" if v else "0" for v in r), float(a)]
                for r, a in zip(self.rules, self.alpha)
            ],
            "coeff_means": dict(zip(COEF_NAMES, map(float, self.coeff_means))),
            "coeff_sds": dict(zip(COEF_NAMES, map(float, self.coeff_sds))),
            "spread": "sd",
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PopulationSpec":
        rules = np.array([[c == "1" for c in bits] for bits, _ in d["alpha"]], dtype=bool)
        alpha = np.array([float(a) for _, a in d["alpha"]])
        alpha = alpha / alpha.sum()
        means = np.array([float(d["coeff_means"][k]) for k in COEF_NAMES])
        spread = np.array([float(d["coeff_sds"][k]) for k in COEF_NAMES])
        kind = d.get("spread", "sd")
        if kind == "variance":
            spread = np.sqrt(spread)
        elif kind != "sd":
            raise ValueError(f"spread must be 'sd' or 'variance', got {kind!r}")
        return cls(rules, alpha, means, spread)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "PopulationSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __repr__(self):
        return (
            f"PopulationSpec(n_rules={len(self.alpha)}, n_styles={self.n_styles}, "
            f"coeff_means={self.coeff_means.tolist()}, coeff_sds={self.coeff_sds.tolist()})"
        )


def true_utility(e, a, p, draw: CoefficientDraw):
    """Deterministic utility ``-exp(theta_p) p + theta_e / e + theta_a / a + theta_0``.

    ``e`` in mpg, ``a`` in seconds (0-60 time), ``p`` in $10k.
    """
    e, a, p = (np.asarray(x, dtype=float) for x in (e, a, p))
    coefs = np.array([draw.theta_p, draw.theta_e, draw.theta_a, draw.theta_0], dtype=float)
    if not (np.all(np.isfinite(e)) and np.all(np.isfinite(a)) and np.all(np.isfinite(p))):
        raise ValueError("utility inputs must be finite")
    if not np.all(np.isfinite(coefs)):
        raise ValueError("coefficients must be finite")
    if np.any(e <= 0) or np.any(a <= 0) or np.any(p < 0):
        raise ValueError("need e > 0, a > 0 and p >= 0")
    u = -np.exp(coefs[0]) * p + coefs[1] / e + coefs[2] / a + coefs[3]
    return float(u) if u.ndim == 0 else u


def utilities(e, a, p, coefs):
    """Utilities for a coefficient matrix ``coefs`` (I, 4) and vehicles (J,) -> (I, J)."""
    coefs = np.atleast_2d(coefs)
    return (
        -np.exp(coefs[:, :1]) * np.asarray(p)[None, :]
        + coefs[:, 1:2] / np.asarray(e)[None, :]
        + coefs[:, 2:3] / np.asarray(a)[None, :]
        + coefs[:, 3:4]
    )


def sample_individual(rng: np.random.Generator, pop: PopulationSpec):
    """Draw one individual's screening rule and utility coefficients (independently)."""
    r = rng.choice(len(pop.alpha), p=pop.alpha)
    theta = pop.draw_coefficients(rng, 1)[0]
    rule = ScreeningRule(tuple(int(v) for v in pop.rules[r]))
    return rule, CoefficientDraw(*map(float, theta))


def sample_individuals(rng: np.random.Generator, pop: PopulationSpec, n: int):
    """Vectorized draw of ``n`` individuals -> (rule indices (n,), coefficients (n, 4))."""
    idx = rng.choice(len(pop.alpha), size=n, p=pop.alpha)
    return idx, pop.draw_coefficients(rng, n)


def all_rules(n_styles: int) -> np.ndarray:
    """All 2^B - 1 non-null rules as a boolean (R, B) array, in binary-count order."""
    rows = [bits for bits in itertools.product((0, 1), repeat=n_styles) if any(bits)]
    rows.sort(key=lambda r: int("".join(map(str, r[::-1])), 2))
    return np.array(rows, dtype=bool)


def independent_acceptance_alpha(marginals, min_mass: float = MIN_RULE_MASS):
    """Rule distribution with independent per-style acceptance, conditioned on non-null.

    The per-style Bernoulli rates are solved so that the *conditioned*
    marginals equal ``marginals``; rules below ``min_mass`` are dropped and
    the rest renormalized.
    """
    target = np.asarray(marginals, dtype=float)
    q = target.copy()
    for _ in range(500):
        q_new = target * (1.0 - np.prod(1.0 - q))
        if np.max(np.abs(q_new - q)) < 1e-15:
            q = q_new
            break
        q = q_new
    rules = all_rules(len(target))
    mass = np.prod(np.where(rules, q, 1.0 - q), axis=1)
    mass /= mass.sum()
    keep = mass >= min_mass
    rules, mass = rules[keep], mass[keep]
    return rules, mass / mass.sum()


def default_population() -> PopulationSpec:
    """Population with the published acceptance marginals and coefficient table."""
    rules, alpha = independent_acceptance_alpha(TABLE2_ACCEPTANCE)
    return PopulationSpec(rules, alpha, TABLE3_MEANS, TABLE3_SPREADS)


def calibrated_population() -> PopulationSpec:
    """As :func:`default_population` but with a positive constant (+23.2).

    With the constant at -23.2, no vehicle on the market attribute ranges
    reaches a utility above about -25.7, so every simulated share would be
    zero. Flipping its sign puts the median market vehicle near ``u = -2.7``.
    """
    means = TABLE3_MEANS.copy()
    means[3] = CALIBRATED_CONSTANT
    rules, alpha = independent_acceptance_alpha(TABLE2_ACCEPTANCE)
    return PopulationSpec(rules, alpha, means, TABLE3_SPREADS)


POPULATION_PRESETS = {
    "calibrated": calibrated_population,
    "table3": default_population,
}
