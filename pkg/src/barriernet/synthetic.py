"""Seeded geometric-random-walk OHLCV universes for tests and dry runs."""

from __future__ import annotations

import numpy as np

from .market_data import OhlcvSeries


def business_days(start: str, n: int) -> np.ndarray:
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return np.busday_offset(first, np.arange(n), roll="forward")


def random_walk_series(
    ticker: str,
    n_days: int,
    rng: np.random.Generator,
    start: str = "2015-01-01",
    start_price: float = 50.0,
    drift: float = 0.0,
    volatility: float = 0.03,
    intraday: float = 0.015,
) -> OhlcvSeries:
    """One ticker of daily bars.

    ``drift`` and ``volatility`` are per-day log-return mean and stdev of the
    close; ``intraday`` scales the open gap and the high/low excursions.
    """
    log_ret = rng.normal(drift - 0.5 * volatility**2, volatility, n_days)
    close = start_price * np.exp(np.cumsum(log_ret))
    prev_close = np.concatenate([[start_price], close[:-1]])
    open_ = prev_close * np.exp(rng.normal(0.0, intraday * 0.5, n_days))
    top = np.maximum(open_, close)
    bottom = np.minimum(open_, close)
    high = top * np.exp(np.abs(rng.normal(0.0, intraday, n_days)))
    low = bottom * np.exp(-np.abs(rng.normal(0.0, intraday, n_days)))
    volume = rng.integers(10_000, 2_000_000, n_days)
    # rounding can nudge high/low inside the body; re-clamp after rounding
    open_, close, high, low = (np.round(a, 6) for a in (open_, close, high, low))
    high = np.maximum(high, np.maximum(open_, close))
    low = np.minimum(low, np.minimum(open_, close))
    return OhlcvSeries(ticker, business_days(start, n_days), open_, high, low, close, volume)


def random_walk_universe(
    n_tickers: int,
    n_days: int,
    seed: int,
    start: str = "2015-01-01",
    drift: float = 0.0,
    volatility: float = 0.03,
    intraday: float = 0.015,
) -> dict[str, OhlcvSeries]:
    """``n_tickers`` independent walks; ticker names are ``SYN000``, ``SYN001``, ..."""
    rng = np.random.default_rng(seed)
    universe = {}
    for k in range(n_tickers):
        ticker = f"SYN{k:03d}"
        start_price = float(np.exp(rng.uniform(np.log(5.0), np.log(500.0))))
        universe[ticker] = random_walk_series(
            ticker, n_days, rng, start=start, start_price=start_price,
            drift=drift, volatility=volatility, intraday=intraday,
        )
    return universe
