"""Pipeline configuration: YAML schema (version 1), defaults and validation."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path
from typing import Any

import yaml

from .evaluation import DEFAULT_MIN_PROPORTION, DEFAULT_THRESHOLDS
from .labeling import DEFAULT_BARRIERS, DEFAULT_HORIZONS, LabelSpec
from .market_data import PROFILE_PRICE_BOUNDS, WINDOW
from .resnet.training import TrainConfig

SCHEMA_VERSION = 1
DATA_DIR_ENV = "BARRIERNET_DATA_DIR"
SPLIT_NAMES = ("train", "validation", "test")


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass
class ModelSettings:
    channels: int = 12
    n_blocks: int = 5
    kernels: list[int] = field(default_factory=lambda: [7, 5, 3])


@dataclass
class BacktestSettings:
    initial_cash: float | None = None  # None -> profile default
    entry_ratio: float = 0.1
    commission_rate: float = 0.00015
    tax_rate: float = 0.0020
    sidecut: list[bool] = field(default_factory=lambda: [True, False])
    split: str = "test"
    random_runs: int = 5
    random_picks_per_day: int | None = None  # None -> match model signal counts
    risk_free_rate: float = 0.0
    benchmarks: dict[str, float] = field(default_factory=dict)


@dataclass
class PipelineConfig:
    data_dir: str = "data"
    output_dir: str = "out"
    profile: str = "KR"
    seed: int = 0
    window: int = WINDOW
    horizons: list[int] = field(default_factory=lambda: list(DEFAULT_HORIZONS))
    barriers: list[float] = field(default_factory=lambda: list(DEFAULT_BARRIERS))
    splits: dict[str, list[str]] = field(default_factory=lambda: {
        "train": ["2006-01-01", "2015-12-31"],
        "validation": ["2016-01-01", "2019-12-31"],
        "test": ["2020-01-01", "2022-12-31"],
    })
    min_close: float | None = None  # None -> profile default
    max_close: float | None = None
    filter_range: str = "train"
    model: ModelSettings = field(default_factory=ModelSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    thresholds: list[float] = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    min_proportion: float = DEFAULT_MIN_PROPORTION
    undefined_as_zero: bool = False
    backtest: BacktestSettings = field(default_factory=BacktestSettings)

    # --- derived ---------------------------------------------------------------

    @property
    def label_specs(self) -> list[LabelSpec]:
        return [LabelSpec(d, p) for p in self.barriers for d in self.horizons]

    def split_range(self, name: str) -> tuple[str, str]:
        start, end = self.splits[name]
        return start, end

    def price_bounds(self) -> tuple[float | None, float | None]:
        default = PROFILE_PRICE_BOUNDS[self.profile]
        lo, hi = default if default is not None else (None, None)
        return (self.min_close if self.min_close is not None else lo,
                self.max_close if self.max_close is not None else hi)

    def resolved_data_dir(self) -> Path:
        return Path(os.environ.get(DATA_DIR_ENV) or self.data_dir)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["version"] = SCHEMA_VERSION
        return d

    def digest(self, *sections: str, extra: Any = None) -> str:
        """Short content hash of the named config sections (plus ``extra``)."""
        d = self.to_dict()
        payload = {k: d[k] for k in sections}
        if extra is not None:
            payload["extra"] = extra
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.blake2b(blob, digest_size=5).hexdigest()


def _check_date(field_name: str, value) -> str:
    if isinstance(value, date):
        return value.isoformat()
    try:
        return date.fromisoformat(str(value)).isoformat()
    except ValueError:
        raise ConfigError(field_name, f"expected YYYY-MM-DD, got {value!r}") from None


def _merge(dc_type, raw: dict | None, prefix: str):
    raw = dict(raw or {})
    known = set(dc_type.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{prefix}.{sorted(unknown)[0]}" if prefix else sorted(unknown)[0], "unknown field")
    return raw


def validate(cfg: PipelineConfig) -> PipelineConfig:
    if cfg.profile not in PROFILE_PRICE_BOUNDS:
        raise ConfigError("profile", f"must be one of {sorted(PROFILE_PRICE_BOUNDS)}, got {cfg.profile!r}")
    if cfg.window < 2:
        raise ConfigError("window", "must be >= 2")
    if not cfg.horizons:
        raise ConfigError("horizons", "need at least one horizon")
    for d in cfg.horizons:
        if not isinstance(d, int) or d < 1:
            raise ConfigError("horizons", f"horizons must be positive integers, got {d!r}")
    for p in cfg.barriers:
        if not 0 < p < 1:
            raise ConfigError("barriers", f"barrier fractions must be in (0, 1), got {p!r}")
    missing = [s for s in SPLIT_NAMES if s not in cfg.splits]
    if missing:
        raise ConfigError(f"splits.{missing[0]}", "missing")
    ranges = []
    for name in SPLIT_NAMES:
        rng = cfg.splits[name]
        if not isinstance(rng, (list, tuple)) or len(rng) != 2:
            raise ConfigError(f"splits.{name}", "expected [start, end]")
        start = _check_date(f"splits.{name}", rng[0])
        end = _check_date(f"splits.{name}", rng[1])
        if start > end:
            raise ConfigError(f"splits.{name}", f"start {start} after end {end}")
        cfg.splits[name] = [start, end]
        ranges.append((name, start, end))
    for (a, _, a_end), (b, b_start, _) in zip(ranges, ranges[1:]):
        if not a_end < b_start:
            raise ConfigError(f"splits.{b}", f"must start after {a} ends ({a_end})")
    if cfg.filter_range not in ("train", "all"):
        raise ConfigError("filter_range", "must be 'train' or 'all'")
    if list(cfg.thresholds) != sorted(cfg.thresholds):
        raise ConfigError("thresholds", "must be sorted ascending")
    if not 0 <= cfg.min_proportion < 1:
        raise ConfigError("min_proportion", "must be in [0, 1)")
    if cfg.backtest.split not in ("validation", "test"):
        raise ConfigError("backtest.split", "must be 'validation' or 'test'")
    if cfg.backtest.random_runs < 1:
        raise ConfigError("backtest.random_runs", "must be >= 1")
    if not 0 < cfg.backtest.entry_ratio <= 1:
        raise ConfigError("backtest.entry_ratio", "must be in (0, 1]")
    if cfg.model.channels < 1 or cfg.model.n_blocks < 1:
        raise ConfigError("model", "channels and n_blocks must be >= 1")
    if any(k % 2 == 0 for k in cfg.model.kernels):
        raise ConfigError("model.kernels", "kernel sizes must be odd")
    return cfg


def from_dict(raw: dict | None) -> PipelineConfig:
    raw = dict(raw or {})
    version = raw.pop("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("version", f"unsupported schema version {version!r}, expected {SCHEMA_VERSION}")
    _merge(PipelineConfig, raw, "")
    sub = {}
    sub["model"] = ModelSettings(**_merge(ModelSettings, raw.pop("model", None), "model"))
    try:
        sub["train"] = TrainConfig(**_merge(TrainConfig, raw.pop("train", None), "train"))
    except (TypeError, ValueError) as exc:
        raise ConfigError("train", str(exc)) from None
    sub["backtest"] = BacktestSettings(**_merge(BacktestSettings, raw.pop("backtest", None), "backtest"))
    try:
        cfg = PipelineConfig(**raw, **sub)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from None
    return validate(cfg)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return validate(PipelineConfig())
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping")
    return from_dict(raw)


def dump_config(cfg: PipelineConfig, path: str | Path) -> None:
    d = json.loads(json.dumps(cfg.to_dict()))
    d = {"version": d.pop("version"), **d}
    Path(path).write_text(yaml.safe_dump(d, sort_keys=False))
