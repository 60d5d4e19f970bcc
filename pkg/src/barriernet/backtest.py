"""Daily event-driven backtest of long-only barrier trades.

Positions are bought at the signal day's close and leave at the take-profit or
stop-loss barrier price (no gap modelling), at the close after ``D`` bars when
sidecut is on, or at the close of the last available bar. A bar touching both
barriers is booked as a loss at the stop price.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .evaluation import PredictionTable
from .labeling import touches_down, touches_up
from .market_data import Bar, OhlcvSeries

logger = logging.getLogger(__name__)

TRADING_DAYS = 252
BARRIER_EXITS = ("take_profit", "stop_loss", "uncertain_loss")
EXIT_REASONS = (*BARRIER_EXITS, "sidecut", "end_of_data")

PROFILE_CASH = {"KR": 10_000_000.0, "US": 10_000.0}


class LedgerError(AssertionError):
    pass


@dataclass
class BacktestConfig:
    initial_cash: float = PROFILE_CASH["KR"]
    entry_ratio: float = 0.1
    commission_rate: float = 0.00015
    tax_rate: float = 0.0020
    take_profit_pct: float = 0.10
    stop_loss_pct: float = 0.10
    horizon_days: int = 5
    sidecut: bool = False
    threshold: float = 0.0
    seed: int = 0
    risk_free_rate: float = 0.0  # annual

    def __post_init__(self):
        if not 0 < self.entry_ratio <= 1:
            raise ValueError(f"entry_ratio must be in (0, 1], got {self.entry_ratio}")
        if self.commission_rate < 0 or self.tax_rate < 0:
            raise ValueError("commission and tax rates must be >= 0")
        if self.take_profit_pct <= 0 or self.stop_loss_pct <= 0:
            raise ValueError("take_profit_pct and stop_loss_pct must be > 0")
        if self.horizon_days < 1:
            raise ValueError("horizon_days must be >= 1")
        if self.initial_cash <= 0:
            raise ValueError("initial_cash must be > 0")

    @classmethod
    def for_profile(cls, profile: str, **overrides) -> "BacktestConfig":
        return cls(initial_cash=PROFILE_CASH[profile.upper()], **overrides)


@dataclass
class Position:
    ticker: str
    entry_date: np.datetime64
    entry_price: float
    shares: int
    up_barrier: float
    down_barrier: float
    entry_commission: float = 0.0
    days_held: int = 0

    @classmethod
    def open(cls, ticker, entry_date, entry_price, shares, cfg: BacktestConfig) -> "Position":
        if shares < 1:
            raise ValueError("a position needs at least one share")
        return cls(
            ticker, entry_date, entry_price, shares,
            up_barrier=entry_price * (1 + cfg.take_profit_pct),
            down_barrier=entry_price * (1 - cfg.stop_loss_pct),
            entry_commission=shares * entry_price * cfg.commission_rate,
        )

    @property
    def notional(self) -> float:
        return self.shares * self.entry_price


@dataclass(frozen=True)
class TradeRecord:
    ticker: str
    entry_date: np.datetime64
    exit_date: np.datetime64
    entry_price: float
    exit_price: float
    shares: int
    gross_pnl: float
    fees: float
    tax: float
    net_pnl: float
    exit_reason: str
    bars_held: int = 0


@dataclass
class BacktestReport:
    total_return: float
    total_trades: float
    win_rate: float
    win_loss_ratio: float
    max_drawdown: float
    sharpe_ratio: float
    equity_dates: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0, "datetime64[D]"))
    equity: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))
    frozen_days: int = 0

    METRICS = ("total_return", "total_trades", "win_rate", "win_loss_ratio", "max_drawdown", "sharpe_ratio")

    def metrics(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.METRICS}


def close_trade(pos: Position, exit_date, exit_price: float, reason: str, cfg: BacktestConfig) -> TradeRecord:
    """Fees are commission on both legs; tax is charged on sale proceeds of a net-profitable trade."""
    proceeds = pos.shares * exit_price
    exit_commission = proceeds * cfg.commission_rate
    gross = proceeds - pos.notional
    fees = pos.entry_commission + exit_commission
    tax = proceeds * cfg.tax_rate if gross - fees > 0 else 0.0
    return TradeRecord(
        pos.ticker, pos.entry_date, np.datetime64(exit_date, "D"), pos.entry_price, exit_price,
        pos.shares, gross, fees, tax, gross - fees - tax, reason, pos.days_held,
    )


def exit_check(position: Position, bar: Bar, cfg: BacktestConfig, is_last: bool = False) -> tuple[float, str] | None:
    """Exit price and reason for ``bar``, or None to keep holding.

    ``position.days_held`` must already count ``bar``. ``is_last`` marks the
    final bar available for the position.
    """
    up = touches_up(bar.high, position.up_barrier)
    down = touches_down(bar.low, position.down_barrier)
    if up and down:
        return position.down_barrier, "uncertain_loss"
    if up:
        return position.up_barrier, "take_profit"
    if down:
        return position.down_barrier, "stop_loss"
    if cfg.sidecut and position.days_held >= cfg.horizon_days:
        return bar.close, "sidecut"
    if is_last:
        return bar.close, "end_of_data"
    return None


def generate_signals(predictions: PredictionTable, threshold: float) -> dict[np.datetime64, list[str]]:
    """Per-date buy lists: predicted rise with confidence >= threshold, by confidence desc then ticker."""
    pred, conf = predictions.predicted, predictions.confidence
    keep = (pred == 2) & (conf >= threshold)
    by_date: dict[np.datetime64, list[tuple[float, str]]] = {}
    for t, d, c in zip(predictions.tickers[keep], predictions.dates[keep], conf[keep]):
        by_date.setdefault(d, []).append((-float(c), str(t)))
    return {d: [t for _, t in sorted(v)] for d, v in sorted(by_date.items())}


@dataclass
class _Tape:
    """Per-ticker bar lookup restricted to the simulation range."""

    series: OhlcvSeries
    lo: int
    hi: int  # exclusive

    def index(self, day) -> int | None:
        i = int(np.searchsorted(self.series.dates, day, side="left"))
        if self.lo <= i < self.hi and self.series.dates[i] == day:
            return i
        return None


def _calendar(prices: Mapping[str, OhlcvSeries], start, end) -> tuple[np.ndarray, dict[str, _Tape]]:
    tapes = {}
    all_dates = []
    for ticker, s in prices.items():
        lo = int(np.searchsorted(s.dates, start, side="left")) if start is not None else 0
        hi = int(np.searchsorted(s.dates, end, side="right")) if end is not None else len(s)
        if hi > lo:
            tapes[ticker] = _Tape(s, lo, hi)
            all_dates.append(s.dates[lo:hi])
    days = np.unique(np.concatenate(all_dates)) if all_dates else np.empty(0, "datetime64[D]")
    return days, tapes


@dataclass
class SimulationState:
    cash: float
    open: dict[str, Position]
    realized: float = 0.0

    def ledger_residual(self, initial_cash: float) -> float:
        committed = sum(p.notional + p.entry_commission for p in self.open.values())
        return (self.cash + committed) - (initial_cash + self.realized)


def simulate(
    signals: Mapping[np.datetime64, Sequence[str]],
    prices: Mapping[str, OhlcvSeries],
    cfg: BacktestConfig,
    start=None,
    end=None,
    check_ledger: bool = True,
) -> tuple[BacktestReport, list[TradeRecord]]:
    """Run the signals through the daily simulation.

    Each day exits are processed first, then entries from that day's buy list
    in order. Entries are sized at ``floor(entry_ratio * initial_cash / close)``
    shares and skipped when cash (including commission) would go negative,
    when the ticker is already held, or on the ticker's last bar in range.
    Positions whose ticker has no bar on a simulation day are frozen and
    counted in ``report.frozen_days``.
    """
    signals = {np.datetime64(d, "D"): list(v) for d, v in signals.items()}
    if start is None:
        start = min(signals) if signals else None
    start = np.datetime64(start, "D") if start is not None else None
    end = np.datetime64(end, "D") if end is not None else None
    days, tapes = _calendar(prices, start, end)
    state = SimulationState(cfg.initial_cash, {})
    trades: list[TradeRecord] = []
    equity = np.empty(len(days))
    last_close: dict[str, float] = {}
    frozen = 0
    budget = cfg.entry_ratio * cfg.initial_cash
    final_day = days[-1] if len(days) else None

    for k, day in enumerate(days):
        for ticker in list(state.open):
            pos = state.open[ticker]
            tape = tapes[ticker]
            i = tape.index(day)
            if i is None:
                frozen += 1
                continue
            pos.days_held += 1
            bar = tape.series.bar(i)
            last_close[ticker] = bar.close
            hit = exit_check(pos, bar, cfg, is_last=(i == tape.hi - 1 or day == final_day))
            if hit is None:
                continue
            trade = close_trade(pos, day, hit[0], hit[1], cfg)
            proceeds = trade.shares * trade.exit_price
            state.cash += proceeds - proceeds * cfg.commission_rate - trade.tax
            state.realized += trade.net_pnl
            trades.append(trade)
            del state.open[ticker]

        for ticker in signals.get(day, ()):
            tape = tapes.get(ticker)
            if tape is None or ticker in state.open:
                continue
            i = tape.index(day)
            if i is None or i == tape.hi - 1 or day == final_day:
                continue
            close = float(tape.series.close[i])
            shares = math.floor(budget / close)
            if shares < 1:
                continue
            pos = Position.open(ticker, day, close, shares, cfg)
            if state.cash - pos.notional - pos.entry_commission < 0:
                continue
            state.cash -= pos.notional + pos.entry_commission
            state.open[ticker] = pos
            last_close[ticker] = close

        if check_ledger:
            resid = state.ledger_residual(cfg.initial_cash)
            if abs(resid) > 1e-6 or state.cash < -1e-9:
                raise LedgerError(f"{day}: ledger residual {resid}, cash {state.cash}")
        equity[k] = state.cash + sum(p.shares * last_close[t] for t, p in state.open.items())

    if frozen:
        logger.warning("positions were frozen on %d position-days with missing bars", frozen)
    report = compute_metrics(equity, trades, cfg.risk_free_rate, initial_cash=cfg.initial_cash)
    report.equity_dates = days
    report.frozen_days = frozen
    return report, trades


def max_drawdown(equity) -> float:
    eq = np.asarray(equity, dtype=np.float64)
    if eq.size == 0:
        return 0.0
    peak = np.maximum.accumulate(eq)
    return float(np.max((peak - eq) / peak))


def sharpe_ratio(daily_returns, risk_free_rate: float = 0.0) -> float:
    """Annualised Sharpe of daily returns; nan when the volatility is zero or undefined."""
    r = np.asarray(daily_returns, dtype=np.float64)
    if r.size < 2:
        return math.nan
    sd = r.std(ddof=1)
    if sd == 0:
        return math.nan
    excess = r - risk_free_rate / TRADING_DAYS
    return float(excess.mean() / sd * math.sqrt(TRADING_DAYS))


def compute_metrics(equity_curve, trades: Sequence[TradeRecord], risk_free_rate: float = 0.0, initial_cash: float | None = None) -> BacktestReport:
    """Aggregate performance.

    Win/loss counts only barrier exits; with no losing barrier exit the ratio
    is ``inf`` (or nan when there are no barrier exits at all). Sharpe is nan
    for a flat curve.
    """
    eq = np.asarray(equity_curve, dtype=np.float64)
    if eq.size == 0:
        raise ValueError("empty equity curve")
    initial = eq[0] if initial_cash is None else initial_cash
    wins = sum(t.net_pnl > 0 for t in trades if t.exit_reason in BARRIER_EXITS)
    losses = sum(t.net_pnl < 0 for t in trades if t.exit_reason in BARRIER_EXITS)
    if losses:
        wl = wins / losses
    else:
        wl = math.inf if wins else math.nan
    returns = np.diff(eq) / eq[:-1]
    return BacktestReport(
        total_return=float(eq[-1] / initial - 1),
        total_trades=len(trades),
        win_rate=sum(t.net_pnl > 0 for t in trades) / len(trades) if trades else math.nan,
        win_loss_ratio=wl,
        max_drawdown=max_drawdown(eq),
        sharpe_ratio=sharpe_ratio(returns, risk_free_rate),
        equity=eq,
    )


def _random_signals(days, tapes: Mapping[str, _Tape], counts, rng: np.random.Generator) -> dict:
    picks = {}
    for day in days:
        k = counts(day)
        if k <= 0:
            continue
        cands = sorted(t for t, tape in tapes.items() if tape.index(day) is not None)
        if not cands:
            continue
        chosen = rng.choice(len(cands), size=min(k, len(cands)), replace=False)
        picks[day] = [cands[c] for c in chosen]
    return picks


def random_baseline_runs(
    universe: Mapping[str, OhlcvSeries],
    cfg: BacktestConfig,
    seed: int | None = None,
    signals: Mapping | None = None,
    picks_per_day: int | None = None,
    runs: int = 5,
    start=None,
    end=None,
) -> list[BacktestReport]:
    """Reports of ``runs`` simulations with uniformly random picks.

    With ``picks_per_day`` the same number of tickers is drawn every day;
    otherwise each day draws as many tickers as ``signals`` holds for it.
    """
    if not universe:
        raise ValueError("empty universe")
    if picks_per_day is None and signals is None:
        raise ValueError("give either model signals to match or picks_per_day")
    seed = cfg.seed if seed is None else seed
    if signals is not None:
        signals = {np.datetime64(d, "D"): v for d, v in signals.items()}
        if start is None and signals:
            start = min(signals)
    days, tapes = _calendar(universe, None if start is None else np.datetime64(start, "D"),
                            None if end is None else np.datetime64(end, "D"))
    if picks_per_day is not None:
        counts = lambda day: picks_per_day  # noqa: E731
    else:
        counts = lambda day: len(signals.get(day, ()))  # noqa: E731
    reports = []
    for run in range(runs):
        rng = np.random.default_rng([seed, run])
        picks = _random_signals(days, tapes, counts, rng)
        report, _ = simulate(picks, universe, cfg, start=days[0] if len(days) else None, end=end)
        reports.append(report)
    return reports


def average_reports(reports: Sequence[BacktestReport]) -> BacktestReport:
    if not reports:
        raise ValueError("no reports to average")
    means = {k: float(np.mean([getattr(r, k) for r in reports])) for k in BacktestReport.METRICS}
    curves = [r.equity for r in reports]
    same_len = len({len(c) for c in curves}) == 1
    return BacktestReport(
        **means,
        equity_dates=reports[0].equity_dates,
        equity=np.mean(curves, axis=0) if same_len else reports[0].equity,
        frozen_days=int(sum(r.frozen_days for r in reports)),
    )


def random_baseline(universe, cfg: BacktestConfig, seed: int | None = None, runs: int = 5, **kwargs) -> BacktestReport:
    """Mean report over ``runs`` random-pick simulations (see ``random_baseline_runs``)."""
    return average_reports(random_baseline_runs(universe, cfg, seed, runs=runs, **kwargs))


# --- naming and CSV -------------------------------------------------------------

def run_name(label_name: str, threshold: float, sidecut: bool, random: bool = False) -> str:
    name = f"{label_name}_threshold_{threshold}_sidecut_{sidecut}"
    return f"random_{name}" if random else name


REPORT_FIELDS = ("label", "total_return", "total_trades", "win_rate", "win_loss_ratio", "max_drawdown", "sharpe_ratio")


def fmt_metric(v: float) -> str:
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.4f}"


def write_report_table(rows: Mapping[str, BacktestReport], path: str | Path, sort: bool = True) -> None:
    """Rows ordered by total return, best first."""
    items = list(rows.items())
    if sort:
        items.sort(key=lambda kv: (-kv[1].total_return, kv[0]))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for name, r in items:
            w.writerow([name, *(fmt_metric(float(getattr(r, k))) for k in REPORT_FIELDS[1:])])


def read_report_table(path: str | Path) -> dict[str, dict[str, float]]:
    with Path(path).open(newline="") as fh:
        return {r["label"]: {k: float(r[k]) for k in REPORT_FIELDS[1:]} for r in csv.DictReader(fh)}


TRADE_FIELDS = tuple(f.name for f in fields(TradeRecord))


def write_trades(trades: Iterable[TradeRecord], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRADE_FIELDS)
        for t in trades:
            w.writerow([
                t.ticker, str(t.entry_date), str(t.exit_date), repr(t.entry_price), repr(t.exit_price),
                t.shares, repr(t.gross_pnl), repr(t.fees), repr(t.tax), repr(t.net_pnl), t.exit_reason,
                t.bars_held,
            ])


def write_equity(report: BacktestReport, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "equity"])
        for d, v in zip(report.equity_dates, report.equity):
            w.writerow([str(d), repr(float(v))])
