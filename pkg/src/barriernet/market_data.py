"""Daily OHLCV ingestion, universe filtering and log-feature windows."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, Iterator, TextIO

import numpy as np

logger = logging.getLogger(__name__)

WINDOW = 600
FEATURE_ROWS = ("open", "high", "low", "close", "volume")

# Close-price bounds per market profile; None means no filter.
PROFILE_PRICE_BOUNDS: dict[str, tuple[float, float] | None] = {
    "US": (2.0, 2000.0),
    "KR": None,
}


class ParseError(ValueError):
    """A row could not be parsed. ``line`` is 1-based."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(ValueError):
    """A bar violates an OHLC invariant."""

    def __init__(self, message: str, field: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{field}: {message}")
        self.field = field
        self.line = line


class InsufficientHistoryError(ValueError):
    def __init__(self, required: int, available: int):
        super().__init__(f"need {required} bars ending at the window, only {available} available")
        self.required = required
        self.available = available


class EmptyRangeError(ValueError):
    """The series has no bars inside the requested date range."""


@dataclass(frozen=True)
class Bar:
    date: date
    open: float
    high: float
    low: float
    close: float
    volume: int

    def __post_init__(self):
        validate_bar(self.open, self.high, self.low, self.close, self.volume)


def validate_bar(o: float, h: float, l: float, c: float, v: float, line: int | None = None) -> None:
    for name, value in (("open", o), ("high", h), ("low", l), ("close", c)):
        if not np.isfinite(value) or value <= 0:
            raise ValidationError(f"price must be finite and > 0, got {value}", name, line)
    if not np.isfinite(v) or v < 0:
        raise ValidationError(f"volume must be >= 0, got {v}", "volume", line)
    if h < max(o, c):
        raise ValidationError(f"high {h} below max(open, close) {max(o, c)}", "high", line)
    if l > min(o, c):
        raise ValidationError(f"low {l} above min(open, close) {min(o, c)}", "low", line)


class OhlcvSeries:
    """Date-ordered daily bars for one ticker, stored column-wise."""

    __slots__ = ("ticker", "dates", "open", "high", "low", "close", "volume")

    def __init__(self, ticker: str, dates, open, high, low, close, volume):
        self.ticker = str(ticker)
        self.dates = np.asarray(dates, dtype="datetime64[D]")
        self.open = np.asarray(open, dtype=np.float64)
        self.high = np.asarray(high, dtype=np.float64)
        self.low = np.asarray(low, dtype=np.float64)
        self.close = np.asarray(close, dtype=np.float64)
        self.volume = np.asarray(volume, dtype=np.float64)
        n = len(self.dates)
        for name in ("open", "high", "low", "close", "volume"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has {len(getattr(self, name))} entries, expected {n}")
        if n > 1 and not np.all(self.dates[1:] > self.dates[:-1]):
            raise ValidationError("dates must be strictly increasing", "date")

    @classmethod
    def from_bars(cls, ticker: str, bars: Iterable[Bar]) -> "OhlcvSeries":
        bars = sorted(bars, key=lambda b: b.date)
        return cls(
            ticker,
            [np.datetime64(b.date, "D") for b in bars],
            [b.open for b in bars],
            [b.high for b in bars],
            [b.low for b in bars],
            [b.close for b in bars],
            [b.volume for b in bars],
        )

    def __len__(self) -> int:
        return len(self.dates)

    def __repr__(self) -> str:
        if not len(self):
            return f"OhlcvSeries({self.ticker!r}, empty)"
        return f"OhlcvSeries({self.ticker!r}, {len(self)} bars, {self.dates[0]}..{self.dates[-1]})"

    def bar(self, i: int) -> Bar:
        return Bar(
            self.dates[i].item(),
            float(self.open[i]),
            float(self.high[i]),
            float(self.low[i]),
            float(self.close[i]),
            int(self.volume[i]),
        )

    @property
    def bars(self) -> list[Bar]:
        return [self.bar(i) for i in range(len(self))]

    def index_of(self, day) -> int | None:
        day = np.datetime64(day, "D")
        i = int(np.searchsorted(self.dates, day))
        if i < len(self.dates) and self.dates[i] == day:
            return i
        return None

    def scaled(self, factor: float) -> "OhlcvSeries":
        """Copy with all four prices multiplied by ``factor``."""
        return OhlcvSeries(
            self.ticker, self.dates, self.open * factor, self.high * factor,
            self.low * factor, self.close * factor, self.volume,
        )


def _parse_float(text: str, field: str, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"cannot parse {field} {text!r} as a number", line) from None


def parse_ohlcv(text: str | TextIO, ticker: str, delimiter: str = ",") -> OhlcvSeries:
    """Parse ``date,open,high,low,close,volume`` rows.

    A header row is optional. Rows are sorted by date; duplicate dates are an
    error. Any bar breaking an OHLC invariant raises ``ValidationError`` naming
    the offending field and line.
    """
    stream = io.StringIO(text) if isinstance(text, str) else text
    rows: list[tuple[np.datetime64, float, float, float, float, float]] = []
    for line_no, row in enumerate(csv.reader(stream, delimiter=delimiter), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if line_no == 1 and row[0].strip().lower() == "date":
            continue
        if len(row) != 6:
            raise ParseError(f"expected 6 columns, got {len(row)}", line_no)
        try:
            day = np.datetime64(date.fromisoformat(row[0].strip()), "D")
        except ValueError:
            raise ParseError(f"bad date {row[0]!r}, expected YYYY-MM-DD", line_no) from None
        o, h, l, c, v = (
            _parse_float(cell.strip(), name, line_no)
            for cell, name in zip(row[1:], FEATURE_ROWS)
        )
        if not np.isfinite(v) or v != int(v):
            raise ValidationError(f"volume must be an integer count, got {row[5]!r}", "volume", line_no)
        validate_bar(o, h, l, c, v, line_no)
        rows.append((day, o, h, l, c, v))

    rows.sort(key=lambda r: r[0])
    for a, b in zip(rows, rows[1:]):
        if a[0] == b[0]:
            raise ValidationError(f"duplicate date {a[0]}", "date")
    if not rows:
        return OhlcvSeries(ticker, [], [], [], [], [], [])
    cols = list(zip(*rows))
    return OhlcvSeries(ticker, *cols)


def load_series(path: str | Path) -> OhlcvSeries:
    path = Path(path)
    with path.open(newline="") as fh:
        return parse_ohlcv(fh, path.stem)


def iter_data_dir(data_dir: str | Path) -> Iterator[Path]:
    yield from sorted(Path(data_dir).glob("*.csv"))


def load_universe(data_dir: str | Path) -> dict[str, OhlcvSeries]:
    universe = {}
    for path in iter_data_dir(data_dir):
        universe[path.stem] = load_series(path)
    return universe


def write_series(series: OhlcvSeries, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *FEATURE_ROWS])
        for i in range(len(series)):
            w.writerow([
                str(series.dates[i]),
                repr(float(series.open[i])),
                repr(float(series.high[i])),
                repr(float(series.low[i])),
                repr(float(series.close[i])),
                int(series.volume[i]),
            ])


def _date_mask(dates: np.ndarray, start, end) -> np.ndarray:
    mask = np.ones(len(dates), dtype=bool)
    if start is not None:
        mask &= dates >= np.datetime64(start, "D")
    if end is not None:
        mask &= dates <= np.datetime64(end, "D")
    return mask


def filter_universe(
    series: OhlcvSeries,
    min_close: float | None = 2.0,
    max_close: float | None = 2000.0,
    date_range: tuple | None = None,
) -> bool:
    """True when every close inside ``date_range`` lies within [min_close, max_close].

    Passing ``None`` for both bounds disables the filter (the KR profile).
    Raises ``EmptyRangeError`` if the series has no bars in the range.
    """
    if min_close is not None and max_close is not None and not min_close < max_close:
        raise ValueError(f"min_close {min_close} must be below max_close {max_close}")
    start, end = date_range if date_range is not None else (None, None)
    closes = series.close[_date_mask(series.dates, start, end)]
    if closes.size == 0:
        raise EmptyRangeError(f"{series.ticker}: no bars in range {start}..{end}")
    if min_close is not None and closes.min() < min_close:
        return False
    if max_close is not None and closes.max() > max_close:
        return False
    return True


def build_feature_window(series: OhlcvSeries, end_index: int, window: int = WINDOW) -> np.ndarray:
    """5 x ``window`` matrix of log10 prices and log10(1 + volume), oldest column first."""
    if end_index < 0 or end_index >= len(series):
        raise IndexError(f"end_index {end_index} outside series of length {len(series)}")
    if end_index + 1 < window:
        raise InsufficientHistoryError(window, end_index + 1)
    sl = slice(end_index + 1 - window, end_index + 1)
    out = np.empty((5, window), dtype=np.float64)
    out[0] = np.log10(series.open[sl])
    out[1] = np.log10(series.high[sl])
    out[2] = np.log10(series.low[sl])
    out[3] = np.log10(series.close[sl])
    out[4] = np.log10(1.0 + series.volume[sl])
    return out


def log_features(series: OhlcvSeries) -> np.ndarray:
    """Full 5 x n log-feature matrix; windows are column slices of this."""
    return np.stack([
        np.log10(series.open),
        np.log10(series.high),
        np.log10(series.low),
        np.log10(series.close),
        np.log10(1.0 + series.volume),
    ])
