import numpy as np

from .market import Market

SHARE_SUM_TOL = 1e-9


def check_market_data(markets, shares, n_styles):
    """Validate (markets, shares) pairs; returns shares as a list of float arrays."""
    markets = list(markets)
    if len(markets) == 0:
        raise ValueError("at least one market is required")
    if shares is None or len(shares) != len(markets):
        raise ValueError("need one share vector per market")
    out = []
    for m, s in zip(markets, shares):
        if not isinstance(m, Market):
            raise TypeError(f"expected Market, got {type(m).__name__}")
        if np.any(m.b >= n_styles):
            raise ValueError(f"market {m.market_id} has body style >= n_styles={n_styles}")
        s = np.asarray(s, dtype=float)
        if s.shape != (m.n_vehicles + 1,):
            raise ValueError(f"market {m.market_id}: expected {m.n_vehicles + 1} shares (outside first)")
        if np.any(s < 0) or not np.all(np.isfinite(s)):
            raise ValueError(f"market {m.market_id}: shares must be finite and nonnegative")
        if abs(s.sum() - 1.0) > SHARE_SUM_TOL:
            raise ValueError(f"market {m.market_id}: shares sum to {s.sum()}, not 1")
        out.append(s)
    return markets, out


def check_markets(markets):
    markets = [markets] if isinstance(markets, Market) else list(markets)
    for m in markets:
        if not isinstance(m, Market):
            raise TypeError(f"expected Market, got {type(m).__name__}")
    return markets
