"""Confidence-threshold sweeps, selective-classification metrics and config selection."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .resnet.network import argmax_high

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.0, 0.7, 0.8, 0.9, 0.99, 0.999, 0.9995)
DEFAULT_MIN_PROPORTION = 1e-5
N_CLASSES = 3


@dataclass(frozen=True)
class PredictionRecord:
    ticker: str
    date: np.datetime64
    probs: tuple[float, float, float]
    true_label: int

    @property
    def predicted(self) -> int:
        return argmax_high(np.asarray(self.probs))

    @property
    def confidence(self) -> float:
        return max(self.probs)


@dataclass
class PredictionTable:
    """Column-wise predictions; the fast path for sweeps over many records."""

    tickers: np.ndarray
    dates: np.ndarray
    probs: np.ndarray
    true_labels: np.ndarray

    def __post_init__(self):
        self.tickers = np.asarray(self.tickers, dtype=str)
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.probs = np.asarray(self.probs, dtype=np.float64).reshape(-1, N_CLASSES)
        self.true_labels = np.asarray(self.true_labels, dtype=np.int64)

    @classmethod
    def from_records(cls, records: Iterable[PredictionRecord]) -> "PredictionTable":
        records = list(records)
        return cls(
            [r.ticker for r in records],
            [r.date for r in records],
            np.array([r.probs for r in records], dtype=np.float64).reshape(-1, N_CLASSES),
            [r.true_label for r in records],
        )

    def __len__(self) -> int:
        return len(self.true_labels)

    @property
    def predicted(self) -> np.ndarray:
        return argmax_high(self.probs) if len(self) else np.empty(0, dtype=np.int64)

    @property
    def confidence(self) -> np.ndarray:
        return self.probs.max(axis=1) if len(self) else np.empty(0)

    def records(self) -> list[PredictionRecord]:
        return [
            PredictionRecord(str(t), d, tuple(float(v) for v in p), int(y))
            for t, d, p, y in zip(self.tickers, self.dates, self.probs, self.true_labels)
        ]


def _as_table(records) -> PredictionTable:
    return records if isinstance(records, PredictionTable) else PredictionTable.from_records(records)


@dataclass
class MetricsRow:
    threshold: float
    accuracy: float
    f1_macro: float
    precision: tuple[float, float, float]
    recall: tuple[float, float, float]
    f1: tuple[float, float, float]
    proportion: float
    retained: int
    classes_in_macro: int


def _ratio(num: float, den: float) -> float:
    return num / den if den else math.nan


def confusion_stats(records, threshold: float, undefined_as_zero: bool = False) -> MetricsRow:
    """Metrics over the records whose max-softmax confidence is ``>= threshold``.

    Per-class F1 is ``2tp / (2tp + fp + fn)``. A class with no retained true or
    predicted instance has undefined (nan) metrics and is left out of the
    macro mean, unless ``undefined_as_zero`` scores it as 0.
    """
    table = _as_table(records)
    n = len(table)
    if n == 0:
        raise ValueError("confusion_stats needs at least one record")
    keep = table.confidence >= threshold
    retained = int(keep.sum())
    pred = table.predicted[keep]
    true = table.true_labels[keep]
    nan3 = (math.nan,) * N_CLASSES
    if retained == 0:
        return MetricsRow(threshold, math.nan, math.nan, nan3, nan3, nan3, 0.0, 0, 0)

    precision, recall, f1 = [], [], []
    for c in range(N_CLASSES):
        tp = int(np.sum((pred == c) & (true == c)))
        fp = int(np.sum((pred == c) & (true != c)))
        fn = int(np.sum((pred != c) & (true == c)))
        precision.append(_ratio(tp, tp + fp))
        recall.append(_ratio(tp, tp + fn))
        f1.append(_ratio(2 * tp, 2 * tp + fp + fn))
    defined = [v for v in f1 if not math.isnan(v)]
    if undefined_as_zero:
        f1_macro = sum(defined) / N_CLASSES
    else:
        f1_macro = sum(defined) / len(defined)
    return MetricsRow(
        threshold=threshold,
        accuracy=float(np.mean(pred == true)),
        f1_macro=f1_macro,
        precision=tuple(precision),
        recall=tuple(recall),
        f1=tuple(f1),
        proportion=retained / n,
        retained=retained,
        classes_in_macro=len(defined),
    )


def threshold_sweep(records, thresholds: Sequence[float] = DEFAULT_THRESHOLDS, undefined_as_zero: bool = False) -> list[MetricsRow]:
    thresholds = list(thresholds)
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    table = _as_table(records)
    return [confusion_stats(table, t, undefined_as_zero) for t in thresholds]


@dataclass(frozen=True)
class Selection:
    label_name: str
    threshold: float
    f1_macro: float
    accuracy: float
    proportion: float


def select_configs(
    sweeps: Mapping[str, Sequence[MetricsRow]],
    min_proportion: float = DEFAULT_MIN_PROPORTION,
) -> list[Selection]:
    """Best-F1 threshold per label spec, dropping picks at or below ``min_proportion``.

    The argmax is taken first and the proportion filter applied to the winner
    only. F1 ties go to the lower threshold. Output is sorted by F1 descending,
    then label name.
    """
    if not sweeps:
        raise ValueError("no sweep tables given")
    picks = []
    for name, rows in sweeps.items():
        rows = [r for r in rows if not math.isnan(r.f1_macro)]
        if not rows:
            continue
        best = max(rows, key=lambda r: (r.f1_macro, -r.threshold))
        if best.proportion <= min_proportion:
            logger.info("%s: best threshold %s dropped, proportion %g", name, best.threshold, best.proportion)
            continue
        picks.append(Selection(name, best.threshold, best.f1_macro, best.accuracy, best.proportion))
    if not picks:
        warnings.warn("every label spec was filtered out by the proportion cutoff", stacklevel=2)
    return sorted(picks, key=lambda s: (-s.f1_macro, s.label_name))


# --- CSV ----------------------------------------------------------------------

def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.4f}"


SWEEP_FIELDS = (
    "label", "threshold", "accuracy", "f1_macro",
    "precision_0", "precision_1", "precision_2",
    "recall_0", "recall_1", "recall_2", "dataset_proportion",
)


def write_sweep_table(sweeps: Mapping[str, Sequence[MetricsRow]], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_FIELDS)
        for name, rows in sweeps.items():
            for r in rows:
                w.writerow([
                    name, r.threshold, _fmt(r.accuracy), _fmt(r.f1_macro),
                    *map(_fmt, r.precision), *map(_fmt, r.recall), _fmt(r.proportion),
                ])


def read_sweep_table(path: str | Path) -> dict[str, list[MetricsRow]]:
    sweeps: dict[str, list[MetricsRow]] = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            prec = tuple(float(row[f"precision_{c}"]) for c in range(N_CLASSES))
            rec = tuple(float(row[f"recall_{c}"]) for c in range(N_CLASSES))
            f1 = tuple(
                math.nan if math.isnan(p) or math.isnan(r) or p + r == 0 else 2 * p * r / (p + r)
                for p, r in zip(prec, rec)
            )
            sweeps.setdefault(row["label"], []).append(MetricsRow(
                threshold=float(row["threshold"]),
                accuracy=float(row["accuracy"]),
                f1_macro=float(row["f1_macro"]),
                precision=prec,
                recall=rec,
                f1=f1,
                proportion=float(row["dataset_proportion"]),
                retained=-1,
                classes_in_macro=-1,
            ))
    return sweeps


SELECTION_FIELDS = ("label", "threshold", "dataset_proportion", "f1_macro", "accuracy")


def write_selection(selections: Sequence[Selection], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SELECTION_FIELDS)
        for s in selections:
            w.writerow([s.label_name, s.threshold, repr(s.proportion), _fmt(s.f1_macro), _fmt(s.accuracy)])


def read_selection(path: str | Path) -> list[Selection]:
    with Path(path).open(newline="") as fh:
        return [
            Selection(r["label"], float(r["threshold"]), float(r["f1_macro"]), float(r["accuracy"]), float(r["dataset_proportion"]))
            for r in csv.DictReader(fh)
        ]


PREDICTION_FIELDS = ("ticker", "date", "p0", "p1", "p2", "predicted", "confidence", "true_label")


def write_predictions(table: PredictionTable, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_FIELDS)
        pred, conf = table.predicted, table.confidence
        for k in range(len(table)):
            p = table.probs[k]
            w.writerow([
                table.tickers[k], str(table.dates[k]), repr(float(p[0])), repr(float(p[1])),
                repr(float(p[2])), int(pred[k]), repr(float(conf[k])), int(table.true_labels[k]),
            ])


def read_predictions(path: str | Path) -> PredictionTable:
    tickers, dates, probs, labels = [], [], [], []
    with Path(path).open(newline="") as fh:
        for r in csv.DictReader(fh):
            tickers.append(r["ticker"])
            dates.append(r["date"])
            probs.append((float(r["p0"]), float(r["p1"]), float(r["p2"])))
            labels.append(int(r["true_label"]))
    return PredictionTable(tickers, dates, np.array(probs).reshape(-1, N_CLASSES), labels)
