"""Three-way barrier labels over a D-day horizon, datasets and label statistics.

Labels: 2 = up barrier touched first, 0 = down barrier touched first,
1 = neither touched within the horizon. When both barriers are touched on the
same bar the order is unknowable from daily data; such samples are labeled 2
and flagged ``uncertain``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .market_data import WINDOW, OhlcvSeries, log_features

logger = logging.getLogger(__name__)

FALL, SIDE, RISE = 0, 1, 2
DEFAULT_HORIZONS = (1, 3, 5, 10, 15, 20, 30)
DEFAULT_BARRIERS = (0.10, 0.20)

# Barrier prices such as 100 * 1.1 carry float rounding error, so a bar printing
# exactly at the barrier needs a little slack to register as a touch.
BARRIER_RTOL = 1e-12


def touches_up(high, barrier):
    return high >= barrier * (1 - BARRIER_RTOL)


def touches_down(low, barrier):
    return low <= barrier * (1 + BARRIER_RTOL)


class InsufficientFutureError(ValueError):
    pass


@dataclass(frozen=True)
class LabelSpec:
    horizon_days: int
    barrier_pct: float

    def __post_init__(self):
        if int(self.horizon_days) != self.horizon_days or self.horizon_days < 1:
            raise ValueError(f"horizon_days must be a positive integer, got {self.horizon_days}")
        if not 0 < self.barrier_pct < 1:
            raise ValueError(f"barrier_pct must be in (0, 1), got {self.barrier_pct}")

    @property
    def name(self) -> str:
        pct = round(self.barrier_pct * 100)
        return f"label_{self.horizon_days}_tp{pct}_ls{pct}"


@dataclass
class LabeledSample:
    ticker: str
    decision_date: np.datetime64
    reference_close: float
    label: int
    uncertain: bool
    window: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.label not in (FALL, SIDE, RISE):
            raise ValueError(f"label must be 0, 1 or 2, got {self.label}")
        if self.uncertain and self.label != RISE:
            raise ValueError("uncertain samples must carry label 2")


@dataclass(frozen=True)
class DatasetStats:
    rise_prop: float
    fall_prop: float
    side_prop: float
    uncertain_prop: float
    sample_count: int

    def render(self) -> str:
        return f"{self.rise_prop:.2f}/{self.fall_prop:.2f}/{self.side_prop:.2f}"


def _first_true(hits: np.ndarray) -> np.ndarray:
    """Index of the first True along the last axis; ``hits.shape[-1]`` if none."""
    n = hits.shape[-1]
    return np.where(hits.any(axis=-1), hits.argmax(axis=-1), n)


def _label_from_hits(first_up: np.ndarray, first_down: np.ndarray, horizon: int):
    label = np.full(first_up.shape, SIDE, dtype=np.int8)
    label[first_up < first_down] = RISE
    label[first_down < first_up] = FALL
    uncertain = (first_up == first_down) & (first_up < horizon)
    label[uncertain] = RISE
    return label, uncertain


def assign_label(series: OhlcvSeries, t: int, spec: LabelSpec) -> tuple[int, bool]:
    """Barrier label for a decision at the close of bar ``t``."""
    d = spec.horizon_days
    if t < 0 or t + d >= len(series):
        raise InsufficientFutureError(
            f"{series.ticker}: need {d} bars after index {t}, have {max(len(series) - t - 1, 0)}"
        )
    ref = series.close[t]
    up = touches_up(series.high[t + 1 : t + d + 1], ref * (1 + spec.barrier_pct))
    down = touches_down(series.low[t + 1 : t + d + 1], ref * (1 - spec.barrier_pct))
    label, uncertain = _label_from_hits(_first_true(up), _first_true(down), d)
    return int(label), bool(uncertain)


def label_series(series: OhlcvSeries, spec: LabelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Labels for every index that has ``D`` future bars, i.e. ``0 .. n-D-1``."""
    d = spec.horizon_days
    n = len(series) - d
    if n <= 0:
        return np.empty(0, dtype=np.int8), np.empty(0, dtype=bool)
    ref = series.close[:n, None]
    # future[i, j] = bar i + 1 + j
    future_high = np.lib.stride_tricks.sliding_window_view(series.high[1:], d)[:n]
    future_low = np.lib.stride_tricks.sliding_window_view(series.low[1:], d)[:n]
    up = touches_up(future_high, ref * (1 + spec.barrier_pct))
    down = touches_down(future_low, ref * (1 - spec.barrier_pct))
    return _label_from_hits(_first_true(up), _first_true(down), d)


@dataclass
class DatasetBuild:
    samples: list[LabeledSample]
    excluded: dict[str, int]


def eligible_indices(series: OhlcvSeries, spec: LabelSpec, split=None, window: int = WINDOW) -> np.ndarray:
    """Decision indices with a full lookback window, ``D`` future bars and date in ``split``."""
    idx = np.arange(window - 1, len(series) - spec.horizon_days)
    if split is not None and idx.size:
        start, end = split
        dates = series.dates[idx]
        keep = np.ones(idx.size, dtype=bool)
        if start is not None:
            keep &= dates >= np.datetime64(start, "D")
        if end is not None:
            keep &= dates <= np.datetime64(end, "D")
        idx = idx[keep]
    return idx


def build_dataset(
    universe: Mapping[str, OhlcvSeries] | Iterable[OhlcvSeries],
    spec: LabelSpec,
    split=None,
    window: int = WINDOW,
    with_windows: bool = True,
    dtype=np.float32,
) -> DatasetBuild:
    """All eligible (ticker, date) samples, ordered by ticker then date.

    ``split`` is an inclusive ``(start, end)`` date pair on the decision date;
    the lookback may reach back before ``start``. Per-ticker exclusion counts
    (dates inside the split lacking history or future bars) are returned
    alongside the samples.
    """
    series_list = list(universe.values()) if isinstance(universe, Mapping) else list(universe)
    series_list.sort(key=lambda s: s.ticker)
    samples: list[LabeledSample] = []
    excluded: dict[str, int] = {}
    for series in series_list:
        idx = eligible_indices(series, spec, split, window)
        in_split = _count_in_split(series, split)
        excluded[series.ticker] = in_split - idx.size
        if idx.size == 0:
            continue
        labels, uncertain = label_series(series, spec)
        feats = log_features(series).astype(dtype) if with_windows else None
        for i in idx:
            samples.append(LabeledSample(
                ticker=series.ticker,
                decision_date=series.dates[i],
                reference_close=float(series.close[i]),
                label=int(labels[i]),
                uncertain=bool(uncertain[i]),
                window=feats[:, i + 1 - window : i + 1] if feats is not None else None,
            ))
    n_excluded = sum(excluded.values())
    if n_excluded:
        logger.info("%s: excluded %d in-split dates lacking history or future bars", spec.name, n_excluded)
    return DatasetBuild(samples, excluded)


def _count_in_split(series: OhlcvSeries, split) -> int:
    if split is None:
        return len(series)
    start, end = split
    mask = np.ones(len(series), dtype=bool)
    if start is not None:
        mask &= series.dates >= np.datetime64(start, "D")
    if end is not None:
        mask &= series.dates <= np.datetime64(end, "D")
    return int(mask.sum())


def dataset_statistics(samples: Iterable[LabeledSample] | np.ndarray, uncertain=None) -> DatasetStats:
    """Label proportions. Accepts samples, or a label array plus an uncertain-flag array."""
    if uncertain is None:
        samples = list(samples)
        labels = np.array([s.label for s in samples], dtype=np.int64)
        uncertain = np.array([s.uncertain for s in samples], dtype=bool)
    else:
        labels = np.asarray(samples, dtype=np.int64)
        uncertain = np.asarray(uncertain, dtype=bool)
    n = labels.size
    if n == 0:
        raise ValueError("cannot compute statistics of an empty dataset")
    counts = np.bincount(labels, minlength=3)
    return DatasetStats(
        rise_prop=counts[RISE] / n,
        fall_prop=counts[FALL] / n,
        side_prop=counts[SIDE] / n,
        uncertain_prop=int(uncertain.sum()) / n,
        sample_count=n,
    )


def class_weights_from_labels(labels: np.ndarray) -> np.ndarray:
    """Inverse-frequency class weights normalised to mean 1.

    A class absent from ``labels`` gets the largest present weight so every
    weight stays positive.
    """
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=3).astype(np.float64)
    if counts.sum() == 0:
        raise ValueError("no labels")
    freq = counts / counts.sum()
    w = np.zeros(3)
    present = freq > 0
    w[present] = 1.0 / freq[present]
    w[~present] = w[present].max()
    return w / w.mean()


# --- persistence -------------------------------------------------------------

MANIFEST_FIELDS = ("ticker", "date", "reference_close", "label", "uncertain")


def dataset_files(stem: str | Path) -> tuple[Path, Path]:
    stem = Path(stem)
    return stem.parent / f"{stem.name}.windows.npy", stem.parent / f"{stem.name}.manifest.csv"


def save_dataset(samples: list[LabeledSample], stem: str | Path) -> tuple[Path, Path]:
    """Write feature windows as ``<stem>.windows.npy`` and labels as ``<stem>.manifest.csv``.

    Row k of the manifest describes window k.
    """
    windows_path, manifest_path = dataset_files(stem)
    if samples and samples[0].window is not None:
        windows = np.stack([s.window for s in samples])
    else:
        windows = np.empty((len(samples), 0, 0), dtype=np.float32)
    np.save(windows_path, windows, allow_pickle=False)
    with manifest_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for s in samples:
            w.writerow([s.ticker, str(s.decision_date), repr(s.reference_close), s.label, int(s.uncertain)])
    return windows_path, manifest_path


def load_dataset(stem: str | Path) -> list[LabeledSample]:
    windows_path, manifest_path = dataset_files(stem)
    windows = np.load(windows_path, allow_pickle=False)
    has_windows = windows.ndim == 3 and windows.shape[1] > 0
    with manifest_path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != len(windows):
        raise ValueError(f"{manifest_path}: {len(rows)} manifest rows for {len(windows)} windows")
    return [
        LabeledSample(
            ticker=r["ticker"],
            decision_date=np.datetime64(r["date"], "D"),
            reference_close=float(r["reference_close"]),
            label=int(r["label"]),
            uncertain=r["uncertain"] == "1",
            window=windows[k] if has_windows else None,
        )
        for k, r in enumerate(rows)
    ]


def write_stats_table(rows: Mapping[str, Mapping[str, DatasetStats]], path: str | Path) -> None:
    """Label-name x split table; cells are ``rise/fall/side``, plus an uncertain column per split."""
    splits: list[str] = []
    for per_split in rows.values():
        for s in per_split:
            if s not in splits:
                splits.append(s)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["label"]
        for s in splits:
            header += [s, f"{s}_uncertain", f"{s}_samples"]
        w.writerow(header)
        for name, per_split in rows.items():
            line = [name]
            for s in splits:
                st = per_split.get(s)
                if st is None:
                    line += ["", "", ""]
                else:
                    line += [st.render(), f"{st.uncertain_prop:.2f}", st.sample_count]
            w.writerow(line)
