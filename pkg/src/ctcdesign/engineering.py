"""Fuel-economy/acceleration feasibility and unit cost per body style.

The feasibility constraint ``g_b(e, a) = 1000/(e - 3.46) - D_b(a) = 0`` with

    D_b(a) = g_const + g_a exp(-a) + g_t t + g_at a^2 t + g_w w + g_wa w a

is linear in ``1000/(e - 3.46)``, so fuel economy is an explicit function of
acceleration time: ``e = 3.46 + 1000 / D_b(a)``. Unit cost is

    c_b(a) = c_const + c_a exp(-a) + c_t t + c_w w + c_wa w a

in $10k. Weight ``w`` (1000 lbs) and technology content ``t`` are fixed per
style.

The shipped coefficients are not measured data. They were chosen so that
sedans reach roughly 18-33 mpg over 5-12 s, fuel economy rises monotonically
with acceleration time for every style, costs sit around 2-3 ($10k), and the
profit-maximizing acceleration is interior for every style.
"""

from __future__ import annotations

import functools
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .market import A_RANGE, E_RANGE
from .population import BODY_STYLES

E_OFFSET = 3.46
DEFAULT_TECHNOLOGY = 20.0


class InfeasibleDesignError(ValueError):
    """Raised when the feasibility denominator is nonpositive or no feasible acceleration exists."""


@dataclass(frozen=True)
class StyleEngineering:
    """Engineering coefficients and bounds for one body style."""

    weight: float
    g_const: float
    g_a: float
    g_t: float
    g_at: float
    g_w: float
    g_wa: float
    c_const: float
    c_a: float
    c_t: float
    c_w: float
    c_wa: float
    technology: float = DEFAULT_TECHNOLOGY
    e_bounds: tuple = (8.0, 50.0)
    a_bounds: tuple = (3.0, 14.0)

    def __post_init__(self):
        if self.weight <= 0:
            raise ValueError("curb weight must be positive")
        object.__setattr__(self, "e_bounds", tuple(map(float, self.e_bounds)))
        object.__setattr__(self, "a_bounds", tuple(map(float, self.a_bounds)))
        (le, ue), (la, ua) = self.e_bounds, self.a_bounds
        if not (E_RANGE[0] <= le < ue <= E_RANGE[1]):
            raise ValueError(f"fuel-economy bounds {self.e_bounds} must be a nonempty interval inside {E_RANGE}")
        if not (A_RANGE[0] <= la < ua <= A_RANGE[1]):
            raise ValueError(f"acceleration bounds {self.a_bounds} must be a nonempty interval inside {A_RANGE}")

    def denominator(self, a):
        a = np.asarray(a, dtype=float)
        w, t = self.weight, self.technology
        return (
            self.g_const
            + self.g_a * np.exp(-a)
            + self.g_t * t
            + self.g_at * a * a * t
            + self.g_w * w
            + self.g_wa * w * a
        )

    def d_denominator(self, a):
        a = np.asarray(a, dtype=float)
        return -self.g_a * np.exp(-a) + 2.0 * self.g_at * a * self.technology + self.g_wa * self.weight

    def cost(self, a):
        a = np.asarray(a, dtype=float)
        w, t = self.weight, self.technology
        return self.c_const + self.c_a * np.exp(-a) + self.c_t * t + self.c_w * w + self.c_wa * w * a

    def d_cost(self, a):
        return -self.c_a * np.exp(-np.asarray(a, dtype=float)) + self.c_wa * self.weight


@dataclass(frozen=True)
class EngineeringConfig:
    """Per-style engineering models, indexed by 0-based body style."""

    styles: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "styles", tuple(self.styles))
        if not self.styles:
            raise ValueError("need at least one body style")

    @property
    def n_styles(self) -> int:
        return len(self.styles)

    def __getitem__(self, b) -> StyleEngineering:
        if not 0 <= int(b) < self.n_styles:
            raise IndexError(f"body style {b} outside 0..{self.n_styles - 1}")
        return self.styles[int(b)]

    def with_bounds(self, e_bounds=None, a_bounds=None) -> "EngineeringConfig":
        kw = {}
        if e_bounds is not None:
            kw["e_bounds"] = e_bounds
        if a_bounds is not None:
            kw["a_bounds"] = a_bounds
        return EngineeringConfig(tuple(replace(s, **kw) for s in self.styles))

    def to_dict(self) -> dict:
        names = BODY_STYLES if self.n_styles == len(BODY_STYLES) else [f"style_{i + 1}" for i in range(self.n_styles)]
        return {"styles": [{"name": n, **asdict(s)} for n, s in zip(names, self.styles)]}

    @classmethod
    def from_dict(cls, doc: dict) -> "EngineeringConfig":
        styles = []
        for d in doc["styles"]:
            d = {k: v for k, v in d.items() if k != "name"}
            styles.append(StyleEngineering(**d))
        return cls(tuple(styles))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "EngineeringConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def fingerprint(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# (weight, g_const, g_at, g_wa) per style; g_a, g_t, g_w and the cost model are shared.
_DEFAULT_STYLE_TABLE = {
    "sports_car": (3.2, 140.139, 0.023162, -4.34286),
    "hatchback": (2.7, 84.239, 0.013489, -2.99763),
    "compact_sedan": (2.9, 95.958, 0.015728, -3.25405),
    "standard_sedan": (3.4, 109.152, 0.018079, -3.19042),
    "crossover": (3.8, 127.106, 0.021193, -3.34624),
    "small_suv": (3.6, 139.339, 0.023162, -3.86032),
    "full_size_suv": (5.2, 220.56, 0.038542, -4.44719),
    "pickup_truck": (4.8, 189.233, 0.031903, -3.98791),
    "minivan": (4.3, 152.035, 0.025512, -3.55982),
}


def default_engineering() -> EngineeringConfig:
    styles = []
    for name in BODY_STYLES:
        w, g_const, g_at, g_wa = _DEFAULT_STYLE_TABLE[name]
        styles.append(
            StyleEngineering(
                weight=w,
                g_const=g_const,
                g_a=300.0,
                g_t=-0.2,
                g_at=g_at,
                g_w=2.0,
                g_wa=g_wa,
                c_const=0.5,
                c_a=15.0,
                c_t=0.02,
                c_w=0.4,
                c_wa=0.0,
            )
        )
    return EngineeringConfig(tuple(styles))


# ---------------------------------------------------------------------------
# operations


@dataclass(frozen=True)
class FuelEconomy:
    """Feasible fuel economy plus whether it falls outside the style's e-bounds."""

    e: float
    out_of_bounds: bool


def g_residual(e, a, b, cfg: EngineeringConfig):
    """``1000/(e - 3.46) - D_b(a)``; zero on the feasible curve."""
    e = np.asarray(e, dtype=float)
    return 1000.0 / (e - E_OFFSET) - cfg[b].denominator(a)


def feasible_fuel_economy(a, b, cfg: EngineeringConfig) -> FuelEconomy:
    """Fuel economy on the feasibility curve at acceleration time ``a``.

    Raises
    ------
    InfeasibleDesignError
        If ``D_b(a) <= 0`` (no positive fuel economy solves the constraint).
    """
    a = float(a)
    if not np.isfinite(a):
        raise ValueError("acceleration must be finite")
    D = float(cfg[b].denominator(a))
    if D <= 0:
        raise InfeasibleDesignError(f"no feasible fuel economy at a={a}, body style {b}: D(a)={D}")
    e = E_OFFSET + 1000.0 / D
    lo, hi = cfg[b].e_bounds
    return FuelEconomy(e, not (lo <= e <= hi))


def fuel_economy_curve(a, b, cfg: EngineeringConfig):
    """Vectorized ``e(a)`` and ``de/da``; callers must keep ``a`` inside the feasible interval."""
    s = cfg[b]
    D = s.denominator(a)
    if np.any(D <= 0):
        raise InfeasibleDesignError(f"nonpositive feasibility denominator for body style {b}")
    e = E_OFFSET + 1000.0 / D
    de = -1000.0 * s.d_denominator(a) / (D * D)
    return e, de


def unit_cost(e, a, b, cfg: EngineeringConfig):
    """Unit cost in $10k. ``e`` is accepted for interface symmetry; the cost model does not use it."""
    del e
    return cfg[b].cost(a)


@functools.lru_cache(maxsize=1024)
def feasible_acceleration_interval(b, cfg: EngineeringConfig, n_grid=2001):
    """The acceleration interval on which ``D > 0`` and ``e(a)`` lies within the e-bounds.

    Found on a grid over the a-bounds and refined with Brent's method at each
    end. Raises :class:`InfeasibleDesignError` if the set is empty or not an
    interval.
    """
    s = cfg[b]
    la, ua = s.a_bounds
    le, ue = s.e_bounds

    def slack(a):
        D = np.asarray(s.denominator(a), dtype=float)
        with np.errstate(divide="ignore"):
            e = E_OFFSET + 1000.0 / D
        return np.where(D > 0, np.minimum(e - le, ue - e), -np.inf)

    grid = np.linspace(la, ua, n_grid)
    ok = slack(grid) >= 0
    if not ok.any():
        raise InfeasibleDesignError(f"body style {b}: no acceleration in {s.a_bounds} meets fuel-economy bounds {s.e_bounds}")
    idx = np.flatnonzero(ok)
    if np.any(np.diff(idx) != 1):
        raise InfeasibleDesignError(f"body style {b}: feasible accelerations do not form an interval")
    i0, i1 = idx[0], idx[-1]

    def refine(i_in, i_out):
        a_in, a_out = grid[i_in], grid[i_out]
        f_in, f_out = float(slack(a_in)), float(slack(a_out))
        if not np.isfinite(f_out) or f_in <= 0:
            return a_in
        r = brentq(lambda x: float(slack(x)), a_in, a_out, xtol=1e-12)
        return r if slack(r) >= 0 else a_in

    lo = grid[i0] if i0 == 0 else refine(i0, i0 - 1)
    hi = grid[i1] if i1 == n_grid - 1 else refine(i1, i1 + 1)
    return float(lo), float(hi)


def feasibility_table(cfg: EngineeringConfig, n_points=25):
    """Rows ``(style, a, e, D, cost, within_bounds)`` tracing each style's curve over its a-bounds."""
    rows = []
    for b, s in enumerate(cfg.styles):
        for a in np.linspace(*s.a_bounds, n_points):
            D = float(s.denominator(a))
            e = E_OFFSET + 1000.0 / D if D > 0 else float("nan")
            ok = D > 0 and s.e_bounds[0] <= e <= s.e_bounds[1]
            rows.append((b + 1, float(a), e, D, float(s.cost(a)), bool(ok)))
    return rows
