"""End-to-end steps behind the CLI subcommands.

Every artifact name carries a short hash of the config sections and upstream
artifacts it depends on, so outputs built under different label specs or
settings never mix. A step whose inputs are missing raises
``MissingArtifactError`` naming the subcommand that produces them.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import backtest as bt
from . import evaluation as ev
from . import labeling as lb
from . import market_data as md
from . import plotting
from .config import SPLIT_NAMES, PipelineConfig
from .resnet import Architecture, load, predict_batch, save, train, write_history
from .synthetic import random_walk_universe

logger = logging.getLogger(__name__)


class MissingArtifactError(RuntimeError):
    def __init__(self, what: str, path: Path, producer: str):
        super().__init__(f"missing {what} ({path}); run `{producer}` first")
        self.producer = producer
        self.path = path


class DataFileError(ValueError):
    pass


@dataclass
class Paths:
    root: Path

    @property
    def universe(self) -> Path:
        return self.root / "universe.csv"

    def sub(self, name: str) -> Path:
        p = self.root / name
        p.mkdir(parents=True, exist_ok=True)
        return p


def _require(path: Path, what: str, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(what, path, producer)
    return path


def _with(stem: Path, ext: str) -> Path:
    return stem.parent / f"{stem.name}{ext}"


def _file_digest(path: Path) -> str:
    return hashlib.blake2b(path.read_bytes(), digest_size=8).hexdigest()


# --- synth / ingest --------------------------------------------------------------

def run_synth(data_dir: Path, n_tickers: int, n_days: int, seed: int, start: str = "2015-01-01",
              drift: float = 0.0, volatility: float = 0.03) -> list[Path]:
    data_dir.mkdir(parents=True, exist_ok=True)
    universe = random_walk_universe(n_tickers, n_days, seed, start=start, drift=drift, volatility=volatility)
    paths = []
    for ticker, series in universe.items():
        path = data_dir / f"{ticker}.csv"
        md.write_series(series, path)
        paths.append(path)
    return paths


UNIVERSE_FIELDS = ("ticker", "bars", "first_date", "last_date", "included", "reason", "digest")


def run_ingest(cfg: PipelineConfig) -> Path:
    """Validate every ``<ticker>.csv`` and record which tickers pass the price filter."""
    data_dir = cfg.resolved_data_dir()
    files = list(md.iter_data_dir(data_dir))
    if not files:
        raise FileNotFoundError(f"no <ticker>.csv files under {data_dir}")
    lo, hi = cfg.price_bounds()
    frange = cfg.split_range("train") if cfg.filter_range == "train" else None
    rows = []
    for path in files:
        try:
            series = md.load_series(path)
        except (md.ParseError, md.ValidationError) as exc:
            raise DataFileError(f"{path}: {exc}") from exc
        included, reason = True, ""
        if lo is not None or hi is not None:
            try:
                included = md.filter_universe(series, lo, hi, frange)
                reason = "" if included else "close outside price bounds"
            except md.EmptyRangeError:
                included, reason = True, "no bars in filter range"
        first = str(series.dates[0]) if len(series) else ""
        last = str(series.dates[-1]) if len(series) else ""
        rows.append([series.ticker, len(series), first, last, int(included), reason, _file_digest(path)])
    paths = Paths(Path(cfg.output_dir))
    paths.root.mkdir(parents=True, exist_ok=True)
    with paths.universe.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(UNIVERSE_FIELDS)
        w.writerows(rows)
    logger.info("ingested %d tickers, %d included", len(rows), sum(r[4] for r in rows))
    return paths.universe


def _universe_rows(cfg: PipelineConfig) -> list[dict]:
    path = _require(Paths(Path(cfg.output_dir)).universe, "universe listing", "ingest")
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def load_included(cfg: PipelineConfig) -> dict[str, md.OhlcvSeries]:
    data_dir = cfg.resolved_data_dir()
    return {
        r["ticker"]: md.load_series(data_dir / f"{r['ticker']}.csv")
        for r in _universe_rows(cfg)
        if r["included"] == "1"
    }


# --- naming ----------------------------------------------------------------------

def data_hash(cfg: PipelineConfig) -> str:
    return _file_digest(_require(Paths(Path(cfg.output_dir)).universe, "universe listing", "ingest"))[:10]


def dataset_stem(cfg: PipelineConfig, spec: lb.LabelSpec, split: str) -> Path:
    h = cfg.digest("window", "splits", extra=[data_hash(cfg), spec.name])
    return Paths(Path(cfg.output_dir)).sub("datasets") / f"{spec.name}.{split}.{h}"


def model_stem(cfg: PipelineConfig, spec: lb.LabelSpec) -> Path:
    h = cfg.digest("model", "train", extra=dataset_stem(cfg, spec, "train").name)
    return Paths(Path(cfg.output_dir)).sub("models") / f"{spec.name}.{h}"


def predictions_path(cfg: PipelineConfig, spec: lb.LabelSpec, split: str) -> Path:
    h = cfg.digest(extra=[model_stem(cfg, spec).name, dataset_stem(cfg, spec, split).name])
    return Paths(Path(cfg.output_dir)).sub("predictions") / f"{spec.name}.{split}.{h}.csv"


def sweep_path(cfg: PipelineConfig) -> Path:
    h = cfg.digest("thresholds", "undefined_as_zero",
                   extra=[predictions_path(cfg, s, "validation").name for s in cfg.label_specs])
    return Path(cfg.output_dir) / f"sweep.{h}.csv"


def selection_path(cfg: PipelineConfig) -> Path:
    h = cfg.digest("min_proportion", extra=sweep_path(cfg).name)
    return Path(cfg.output_dir) / f"selection.{h}.csv"


def stats_path(cfg: PipelineConfig) -> Path:
    h = cfg.digest(extra=[dataset_stem(cfg, s, sp).name for s in cfg.label_specs for sp in SPLIT_NAMES])
    return Path(cfg.output_dir) / f"stats.{h}.csv"


def backtest_report_path(cfg: PipelineConfig, overrides: dict) -> Path:
    split = cfg.backtest.split
    h = cfg.digest("backtest", "seed", extra=[
        overrides,
        selection_path(cfg).name if overrides.get("threshold") is None else None,
        [predictions_path(cfg, s, split).name for s in cfg.label_specs],
    ])
    return Path(cfg.output_dir) / f"backtest.{split}.{h}.csv"


# --- label / stats ----------------------------------------------------------------

def run_label(cfg: PipelineConfig) -> list[Path]:
    universe = load_included(cfg)
    written = []
    for spec in cfg.label_specs:
        for split in SPLIT_NAMES:
            build = lb.build_dataset(universe, spec, cfg.split_range(split), window=cfg.window)
            windows, manifest = lb.save_dataset(build.samples, dataset_stem(cfg, spec, split))
            logger.info("%s %s: %d samples, %d excluded", spec.name, split, len(build.samples), sum(build.excluded.values()))
            written += [windows, manifest]
    return written


def _dataset(cfg: PipelineConfig, spec: lb.LabelSpec, split: str) -> list[lb.LabeledSample]:
    stem = dataset_stem(cfg, spec, split)
    _require(lb.dataset_files(stem)[1], f"{spec.name} {split} dataset", "label")
    return lb.load_dataset(stem)


def compute_stats(cfg: PipelineConfig) -> dict[str, dict[str, lb.DatasetStats]]:
    table: dict[str, dict[str, lb.DatasetStats]] = {}
    for spec in cfg.label_specs:
        per_split = {}
        for split in SPLIT_NAMES:
            samples = _dataset(cfg, spec, split)
            if samples:
                per_split[split] = lb.dataset_statistics(samples)
        table[spec.name] = per_split
    return table


def run_stats(cfg: PipelineConfig) -> Path:
    path = stats_path(cfg)
    lb.write_stats_table(compute_stats(cfg), path)
    return path


# --- train / predict -------------------------------------------------------------

def architecture(cfg: PipelineConfig) -> Architecture:
    return Architecture(channels=cfg.model.channels, n_blocks=cfg.model.n_blocks,
                        kernels=tuple(cfg.model.kernels), window=cfg.window)


def run_train(cfg: PipelineConfig) -> list[Path]:
    written = []
    for spec in cfg.label_specs:
        samples = _dataset(cfg, spec, "train")
        if not samples:
            logger.warning("%s: empty training set, skipped", spec.name)
            continue
        net, history = train(samples, cfg.train, arch=architecture(cfg))
        stem = model_stem(cfg, spec)
        save(net, _with(stem, ".ckpt"))
        write_history(history, _with(stem, ".history.csv"))
        written.append(_with(stem, ".ckpt"))
    return written


def run_predict(cfg: PipelineConfig, splits=("validation", "test")) -> list[Path]:
    written = []
    for spec in cfg.label_specs:
        ckpt = _require(_with(model_stem(cfg, spec), ".ckpt"), f"{spec.name} checkpoint", "train")
        net = load(ckpt)
        for split in splits:
            samples = _dataset(cfg, spec, split)
            if samples:
                probs = predict_batch(net, np.stack([s.window for s in samples]))
            else:
                probs = np.empty((0, 3))
            table = ev.PredictionTable(
                [s.ticker for s in samples], [s.decision_date for s in samples], probs,
                [s.label for s in samples],
            )
            path = predictions_path(cfg, spec, split)
            ev.write_predictions(table, path)
            written.append(path)
    return written


def _predictions(cfg: PipelineConfig, spec: lb.LabelSpec, split: str) -> ev.PredictionTable:
    path = _require(predictions_path(cfg, spec, split), f"{spec.name} {split} predictions", "predict")
    return ev.read_predictions(path)


# --- sweep / select --------------------------------------------------------------

def run_sweep(cfg: PipelineConfig) -> Path:
    sweeps = {}
    for spec in cfg.label_specs:
        table = _predictions(cfg, spec, "validation")
        if len(table):
            sweeps[spec.name] = ev.threshold_sweep(table, cfg.thresholds, cfg.undefined_as_zero)
    path = sweep_path(cfg)
    ev.write_sweep_table(sweeps, path)
    return path


def run_select(cfg: PipelineConfig) -> Path:
    sweeps = ev.read_sweep_table(_require(sweep_path(cfg), "threshold sweep", "sweep"))
    picks = ev.select_configs(sweeps, cfg.min_proportion) if sweeps else []
    path = selection_path(cfg)
    ev.write_selection(picks, path)
    return path


# --- backtest --------------------------------------------------------------------

def _backtest_config(cfg: PipelineConfig, spec: lb.LabelSpec, threshold: float, sidecut: bool) -> bt.BacktestConfig:
    s = cfg.backtest
    cash = s.initial_cash if s.initial_cash is not None else bt.PROFILE_CASH[cfg.profile]
    return bt.BacktestConfig(
        initial_cash=cash, entry_ratio=s.entry_ratio, commission_rate=s.commission_rate,
        tax_rate=s.tax_rate, take_profit_pct=spec.barrier_pct, stop_loss_pct=spec.barrier_pct,
        horizon_days=spec.horizon_days, sidecut=sidecut, threshold=threshold, seed=cfg.seed,
        risk_free_rate=s.risk_free_rate,
    )


def run_backtest(cfg: PipelineConfig, threshold: float | None = None, sidecut: bool | None = None) -> Path:
    """Backtest each selected (label spec, threshold) plus its random baseline.

    An explicit ``threshold`` backtests every configured label spec at that
    threshold instead of reading the selection table.
    """
    split = cfg.backtest.split
    specs = {s.name: s for s in cfg.label_specs}
    tables = {name: _predictions(cfg, spec, split) for name, spec in specs.items()}
    if threshold is None:
        picks = [(p.label_name, p.threshold) for p in
                 ev.read_selection(_require(selection_path(cfg), "config selection", "select"))
                 if p.label_name in specs]
    else:
        picks = [(name, threshold) for name in specs]
    sidecuts = [sidecut] if sidecut is not None else list(cfg.backtest.sidecut)
    universe = load_included(cfg)
    start, end = cfg.split_range(split)
    out_dir = Paths(Path(cfg.output_dir)).sub("backtest")

    rows: dict[str, bt.BacktestReport] = {}
    for name, thr in picks:
        spec = specs[name]
        signals = bt.generate_signals(tables[name], thr)
        for sc in sidecuts:
            bcfg = _backtest_config(cfg, spec, thr, sc)
            report, trades = bt.simulate(signals, universe, bcfg, start=start, end=end)
            run = bt.run_name(name, thr, sc)
            bt.write_trades(trades, out_dir / f"{run}.trades.csv")
            bt.write_equity(report, out_dir / f"{run}.equity.csv")
            rows[run] = report
            baseline = bt.random_baseline(
                universe, bcfg, seed=cfg.seed, runs=cfg.backtest.random_runs,
                signals=None if cfg.backtest.random_picks_per_day else signals,
                picks_per_day=cfg.backtest.random_picks_per_day, start=start, end=end,
            )
            rand_run = bt.run_name(name, thr, sc, random=True)
            bt.write_equity(baseline, out_dir / f"{rand_run}.equity.csv")
            rows[rand_run] = baseline
    path = backtest_report_path(cfg, {"threshold": threshold, "sidecut": sidecut})
    bt.write_report_table(rows, path)
    return path


# --- report ----------------------------------------------------------------------

def _read_equity(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return (np.array([r["date"] for r in rows], dtype="datetime64[D]"),
            np.array([float(r["equity"]) for r in rows]))


def run_report(cfg: PipelineConfig, backtest_csv: Path | None = None) -> list[Path]:
    """Collect stats, sweep, selection and backtest tables under ``report/`` and draw figures."""
    root = Path(cfg.output_dir)
    rep = Paths(root).sub("report")
    figs = Paths(rep).sub("figures")
    written = []

    stats = compute_stats(cfg)
    lb.write_stats_table(stats, rep / "dataset_statistics.csv")
    written.append(rep / "dataset_statistics.csv")
    written.append(plotting.plot_label_mix(stats, figs / "label_mix.png"))

    sweeps = ev.read_sweep_table(_require(sweep_path(cfg), "threshold sweep", "sweep"))
    ev.write_sweep_table(sweeps, rep / "validation_sweep.csv")
    written.append(rep / "validation_sweep.csv")
    if sweeps:
        written.append(plotting.plot_threshold_sweep(sweeps, figs / "threshold_sweep.png"))

    picks = ev.read_selection(_require(selection_path(cfg), "config selection", "select"))
    ev.write_selection(picks, rep / "selected_configs.csv")
    written.append(rep / "selected_configs.csv")

    bt_csv = backtest_csv or backtest_report_path(cfg, {"threshold": None, "sidecut": None})
    table = bt.read_report_table(_require(bt_csv, "backtest report", "backtest"))
    with (rep / "backtest_results.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*bt.REPORT_FIELDS, "excess_vs_best_random"])
        best_random = max((v["total_return"] for k, v in table.items() if k.startswith("random_")), default=float("nan"))
        for name, vals in table.items():
            excess = "" if name.startswith("random_") else bt.fmt_metric(vals["total_return"] - best_random)
            w.writerow([name, *(bt.fmt_metric(vals[k]) for k in bt.REPORT_FIELDS[1:]), excess])
        for name, ret in cfg.backtest.benchmarks.items():
            w.writerow([f"market_{name}", bt.fmt_metric(ret), "", "", "", "", "", ""])
    written.append(rep / "backtest_results.csv")

    curves = {}
    for name in table:
        eq = root / "backtest" / f"{name}.equity.csv"
        if eq.exists():
            curves[name] = _read_equity(eq)
    if curves:
        written.append(plotting.plot_equity_curves(curves, figs / "equity_curves.png", cfg.backtest.benchmarks))

    histories = {}
    for spec in cfg.label_specs:
        hist = _with(model_stem(cfg, spec), ".history.csv")
        if hist.exists():
            with hist.open(newline="") as fh:
                histories[spec.name] = [(int(r["epoch"]), float(r["loss"]), float(r["accuracy"])) for r in csv.DictReader(fh)]
    if histories:
        written.append(plotting.plot_training_history(histories, figs / "training_history.png"))
    return written
