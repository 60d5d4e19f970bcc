"""Shared builders for test fixtures."""

import numpy as np

from barriernet.labeling import BARRIER_RTOL, FALL, RISE, SIDE
from barriernet.evaluation import PredictionRecord
from barriernet.market_data import OhlcvSeries
from barriernet.synthetic import business_days


def series_from_closes(closes, highs=None, lows=None, ticker="TST", start="2020-01-01", volume=1000):
    """Series whose open equals the close; high/low default to the close."""
    closes = np.asarray(closes, dtype=np.float64)
    highs = closes if highs is None else np.maximum(np.asarray(highs, dtype=np.float64), closes)
    lows = closes if lows is None else np.minimum(np.asarray(lows, dtype=np.float64), closes)
    vol = np.full(closes.size, volume)
    return OhlcvSeries(ticker, business_days(start, closes.size), closes, highs, lows, closes, vol)


def flat_series(n, price=100.0, ticker="FLAT", start="2020-01-01"):
    return series_from_closes(np.full(n, price), ticker=ticker, start=start)


def oracle_label(high, low, close, t, horizon, pct):
    """First-hit rule applied one future day at a time."""
    ref = close[t]
    up = ref * (1 + pct) * (1 - BARRIER_RTOL)
    down = ref * (1 - pct) * (1 + BARRIER_RTOL)
    for k in range(t + 1, t + horizon + 1):
        hit_up = high[k] >= up
        hit_down = low[k] <= down
        if hit_up and hit_down:
            return RISE, True
        if hit_up:
            return RISE, False
        if hit_down:
            return FALL, False
    return SIDE, False


def trend_fixture(n=64, length=50, seed=3):
    """Separable toy set: each class is a price path with its own slope."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 3
    slope = {0: -0.004, 1: 0.0, 2: 0.004}
    x = np.empty((n, 5, length))
    steps = np.arange(length)
    for i, lab in enumerate(labels):
        base = rng.uniform(0.5, 2.5)
        close = base + slope[int(lab)] * steps + rng.normal(0, 0.002, length).cumsum()
        o = close + rng.normal(0, 0.002, length)
        hi = np.maximum(o, close) + np.abs(rng.normal(0, 0.003, length))
        lo = np.minimum(o, close) - np.abs(rng.normal(0, 0.003, length))
        vol = rng.uniform(4, 6, length)
        x[i] = [o, hi, lo, close, vol]
    return x, labels


TRUE = [2, 2, 2, 2, 2, 0, 0, 1, 1, 1]
PRED = [2, 2, 2, 0, 1, 2, 0, 1, 1, 0]
CONF = [0.5, 0.75, 0.85, 0.95, 0.995, 0.9992, 0.9997, 0.6, 0.8, 0.9]


def prediction_probs(pred, conf):
    p = np.full(3, (1 - conf) / 2)
    p[pred] = conf
    return tuple(p)


def ten_records():
    """Class 2 has tp=3, fp=1, fn=2."""
    day = np.datetime64("2020-01-02")
    return [
        PredictionRecord(f"T{i}", day, prediction_probs(p, c), t)
        for i, (t, p, c) in enumerate(zip(TRUE, PRED, CONF))
    ]
