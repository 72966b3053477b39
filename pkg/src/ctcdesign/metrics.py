"""Predictive power, design error and profit recovery against the true behavior."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .choice_models import predict_proba


@dataclass
class MetricReport:
    model: str
    M: int
    replicate: int
    kld: float
    kld_full: float
    design_error: float
    profit_recovery: float
    pricing_on_offering_recovery: float

    def to_dict(self):
        return asdict(self)


class InfiniteDivergence(ValueError):
    pass


def kl_divergence(p_true, p_model) -> float:
    """``sum P^T log(P^T / P)`` over the given entries.

    Terms with ``P^T = 0`` contribute 0. A model probability of 0 where the
    true probability is positive gives ``inf``.
    """
    p_true = np.asarray(p_true, dtype=float)
    p_model = np.asarray(p_model, dtype=float)
    if p_true.shape != p_model.shape:
        raise ValueError("probability vectors must have the same shape")
    pos = p_true > 0
    if np.any(p_model[pos] <= 0):
        return float("inf")
    return float(np.sum(p_true[pos] * (np.log(p_true[pos]) - np.log(p_model[pos]))))


def kld(validation_markets, model, true_probabilities, include_outside=False, strict=False) -> float:
    """Mean per-market divergence of ``model`` from the true choice probabilities.

    Parameters
    ----------
    validation_markets : sequence of Market
    model : ChoiceModel, or a callable mapping a Market to probabilities
    true_probabilities : sequence of arrays (outside good first), one per market
    include_outside : bool
        Also sum over the outside good. By default only the vehicles enter,
        so each market's term covers a sub-distribution and can be
        negative; with the outside good every term is a divergence between
        full distributions and is nonnegative.
    strict : bool
        Raise :class:`InfiniteDivergence` instead of returning ``inf``.
    """
    markets = list(validation_markets)
    if not markets:
        raise ValueError("need at least one validation market")
    if len(true_probabilities) != len(markets):
        raise ValueError("need one true probability vector per market")
    predict = model if callable(model) and not hasattr(model, "kind") else (lambda m: predict_proba(model, m))
    lo = 0 if include_outside else 1
    terms = np.array([kl_divergence(np.asarray(pt)[lo:], predict(m)[lo:]) for m, pt in zip(markets, true_probabilities)])
    if strict and not np.all(np.isfinite(terms)):
        raise InfiniteDivergence("model assigns zero probability where the true probability is positive")
    return float(np.mean(terms))


def relative_design_distance(x, x_star) -> float:
    """``(|e - e*| / e* + |a - a*| / a*) / 2``."""
    (e, a), (es, as_) = x, x_star
    return 0.5 * (abs(e - es) / es + abs(a - as_) / as_)


def design_error(candidate, ideal, n_styles=None) -> float:
    """Body-style count mismatch plus a Hausdorff distance over shared styles.

    ``d = (sum_b N_b + max(H+, H-)) / 2`` where ``N_b = |n_b - n*_b| / n*_b``
    (or ``n_b`` when the ideal has no vehicle of style b) and ``H+``/``H-``
    are the directed Hausdorff distances, under the relative (e, a) error,
    between same-style vehicles of the two portfolios. Prices are ignored.
    When the portfolios share no style the Hausdorff terms are 0.
    """
    n_styles = n_styles or int(max(candidate.styles.max(), ideal.styles.max())) + 1
    n = candidate.style_counts(n_styles)
    n_star = ideal.style_counts(n_styles)
    N = np.where(n_star > 0, np.abs(n - n_star) / np.maximum(n_star, 1), n)
    cand = [(v.b, (v.e, v.a)) for v in candidate.vehicles]
    ideal_v = [(v.b, (v.e, v.a)) for v in ideal.vehicles]

    def directed(src, dst, dst_counts):
        worst = 0.0
        for b, x in src:
            if dst_counts[b] == 0:
                continue
            worst = max(worst, min(relative_design_distance(x, y) if src is cand else relative_design_distance(y, x) for bb, y in dst if bb == b))
        return worst

    h_plus = directed(cand, ideal_v, n_star)
    h_minus = directed(ideal_v, cand, n)
    return 0.5 * (float(N.sum()) + max(h_plus, h_minus))


def profit_recovery(true_profit, ideal_true_profit) -> float:
    """Fraction of the ideal portfolio's true profit achieved."""
    if not ideal_true_profit > 0:
        raise ValueError(f"ideal true profit must be positive, got {ideal_true_profit}")
    return float(true_profit) / float(ideal_true_profit)
