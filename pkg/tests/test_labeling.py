import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from barriernet.labeling import (
    FALL,
    RISE,
    SIDE,
    InsufficientFutureError,
    LabeledSample,
    LabelSpec,
    assign_label,
    build_dataset,
    class_weights_from_labels,
    dataset_statistics,
    label_series,
    load_dataset,
    save_dataset,
    write_stats_table,
)
from barriernet.synthetic import random_walk_series, random_walk_universe

from helpers import flat_series, oracle_label, series_from_closes

SPEC = LabelSpec(5, 0.10)


def _ref_100(highs, lows):
    """Reference close 100 at t=0 followed by five bars with the given extremes."""
    closes = [100.0] + [100.0] * 5
    return series_from_closes(closes, highs=[100.0] + highs, lows=[100.0] + lows)


def test_up_barrier_only():
    s = _ref_100([105, 111, 105, 105, 105], [95, 95, 95, 95, 95])
    assert assign_label(s, 0, SPEC) == (RISE, False)


def test_down_barrier_only():
    s = _ref_100([105, 105, 105, 105, 105], [89, 95, 95, 95, 95])
    assert assign_label(s, 0, SPEC) == (FALL, False)


def test_both_barriers_same_bar_is_uncertain_rise():
    s = _ref_100([105, 105, 111, 105, 105], [95, 95, 89, 95, 95])
    assert assign_label(s, 0, SPEC) == (RISE, True)


def test_sideways():
    s = _ref_100([109, 109, 109, 109, 109], [91, 91, 91, 91, 91])
    assert assign_label(s, 0, SPEC) == (SIDE, False)


def test_touch_exactly_at_barrier_counts():
    s = _ref_100([105, 110, 105, 105, 105], [95, 95, 95, 95, 95])
    assert assign_label(s, 0, SPEC) == (RISE, False)
    s = _ref_100([105, 105, 105, 105, 105], [95, 95, 90, 95, 95])
    assert assign_label(s, 0, SPEC) == (FALL, False)


def test_earlier_touch_wins_over_later_double_touch():
    s = _ref_100([105, 105, 111, 105, 105], [89, 95, 89, 95, 95])
    assert assign_label(s, 0, SPEC) == (FALL, False)


def test_touch_after_horizon_ignored():
    closes = [100.0] * 8
    highs = [100.0] * 7 + [150.0]
    s = series_from_closes(closes, highs=highs)
    assert assign_label(s, 0, SPEC) == (SIDE, False)


def test_insufficient_future():
    s = flat_series(10)
    assign_label(s, 4, SPEC)
    with pytest.raises(InsufficientFutureError):
        assign_label(s, 5, SPEC)


def test_label_series_length_and_agreement():
    s = random_walk_series("A", 200, np.random.default_rng(1))
    labels, uncertain = label_series(s, SPEC)
    assert labels.shape == (195,)
    for t in range(0, 195, 7):
        assert (int(labels[t]), bool(uncertain[t])) == assign_label(s, t, SPEC)


@settings(max_examples=200, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    horizon=st.sampled_from([1, 3, 5, 10, 15, 20, 30]),
    pct=st.sampled_from([0.10, 0.20]),
    vol=st.floats(0.005, 0.12),
)
def test_vectorised_labels_match_oracle(seed, horizon, pct, vol):
    s = random_walk_series("H", 60, np.random.default_rng(seed), volatility=vol, intraday=vol / 2)
    labels, uncertain = label_series(s, LabelSpec(horizon, pct))
    for t in range(labels.size):
        assert (labels[t], uncertain[t]) == oracle_label(s.high, s.low, s.close, t, horizon, pct)


def test_spec_name():
    assert LabelSpec(5, 0.1).name == "label_5_tp10_ls10"
    assert LabelSpec(30, 0.2).name == "label_30_tp20_ls20"


@pytest.mark.parametrize("d,p", [(0, 0.1), (5, 0.0), (5, 1.0), (2.5, 0.1)])
def test_spec_rejects_bad_values(d, p):
    with pytest.raises(ValueError):
        LabelSpec(d, p)


def test_uncertain_must_be_rise():
    with pytest.raises(ValueError):
        LabeledSample("A", np.datetime64("2020-01-01"), 1.0, FALL, True)


def test_610_bars_gives_six_samples():
    s = flat_series(610)
    build = build_dataset([s], SPEC)
    assert len(build.samples) == 6
    assert [s_.decision_date for s_ in build.samples] == list(s.dates[599:605])
    assert build.samples[0].window.shape == (5, 600)


def test_short_ticker_contributes_nothing():
    long_ = flat_series(610, ticker="LONG")
    short = flat_series(300, ticker="SHORT")
    build = build_dataset({"SHORT": short, "LONG": long_}, SPEC)
    assert {x.ticker for x in build.samples} == {"LONG"}
    assert build.excluded["SHORT"] == 300


def test_split_filters_on_decision_date_and_orders_by_ticker():
    a = flat_series(620, ticker="B")
    b = flat_series(620, ticker="A")
    split = (str(a.dates[605]), str(a.dates[610]))
    build = build_dataset([a, b], SPEC, split=split, with_windows=False)
    assert [x.ticker for x in build.samples] == ["A"] * 6 + ["B"] * 6
    assert all(split[0] <= str(x.decision_date) <= split[1] for x in build.samples)


def test_window_matches_features():
    s = random_walk_series("W", 620, np.random.default_rng(0))
    sample = build_dataset([s], SPEC, with_windows=True, dtype=np.float64).samples[3]
    t = 602
    assert sample.decision_date == s.dates[t]
    np.testing.assert_allclose(sample.window[3, -1], np.log10(s.close[t]))
    np.testing.assert_allclose(sample.window[4, 0], np.log10(1 + s.volume[t - 599]))


def test_disjoint_splits_are_additive():
    u = random_walk_universe(2, 700, seed=4)
    dates = u["SYN000"].dates
    first = (str(dates[600]), str(dates[640]))
    second = (str(dates[641]), str(dates[690]))
    whole = build_dataset(u, SPEC, split=(first[0], second[1]), with_windows=False).samples
    parts = (build_dataset(u, SPEC, split=first, with_windows=False).samples
             + build_dataset(u, SPEC, split=second, with_windows=False).samples)
    key = lambda x: (x.ticker, x.decision_date)  # noqa: E731
    assert sorted(map(key, whole)) == sorted(map(key, parts))


def test_statistics_render_example():
    labels = np.array([RISE] * 7 + [FALL] * 7 + [SIDE] * 86)
    stats = dataset_statistics(labels, np.zeros(100, bool))
    assert stats.render() == "0.07/0.07/0.86"
    assert stats.sample_count == 100


def test_statistics_all_side():
    assert dataset_statistics(np.ones(5, int), np.zeros(5, bool)).render() == "0.00/0.00/1.00"


def test_uncertain_proportion():
    d = np.datetime64("2020-01-01")
    samples = [LabeledSample("A", d, 1.0, RISE, True) for _ in range(3)]
    samples += [LabeledSample("A", d, 1.0, SIDE, False) for _ in range(7)]
    assert dataset_statistics(samples).uncertain_prop == pytest.approx(0.3, abs=1e-12)


def test_statistics_empty():
    with pytest.raises(ValueError):
        dataset_statistics([])


def test_inverse_frequency_weights():
    labels = np.array([FALL] * 7 + [SIDE] * 86 + [RISE] * 7)
    w = class_weights_from_labels(labels)
    raw = np.array([1 / 0.07, 1 / 0.86, 1 / 0.07])
    np.testing.assert_allclose(w, raw / raw.mean(), rtol=1e-12)
    assert w.mean() == pytest.approx(1.0)


def test_weights_absent_class_gets_max():
    w = class_weights_from_labels(np.array([1, 1, 1, 2]))
    assert w[0] == w.max() == w[2]


def test_sideways_share_shrinks_with_horizon():
    u = random_walk_universe(4, 700, seed=11)
    side = []
    for d in (1, 5, 15, 30):
        samples = build_dataset(u, LabelSpec(d, 0.1), window=2, with_windows=False).samples
        side.append(dataset_statistics(samples).side_prop)
    assert side == sorted(side, reverse=True)


def test_dataset_round_trip(tmp_path):
    s = random_walk_series("RT", 610, np.random.default_rng(2))
    samples = build_dataset([s], SPEC).samples
    save_dataset(samples, tmp_path / "ds.train.abc")
    back = load_dataset(tmp_path / "ds.train.abc")
    assert len(back) == 6
    for a, b in zip(samples, back):
        assert (a.ticker, a.decision_date, a.reference_close, a.label, a.uncertain) == (
            b.ticker, b.decision_date, b.reference_close, b.label, b.uncertain)
        np.testing.assert_array_equal(a.window, b.window)


def test_stats_table(tmp_path):
    st_ = dataset_statistics(np.array([2] * 7 + [0] * 7 + [1] * 86), np.zeros(100, bool))
    path = tmp_path / "stats.csv"
    write_stats_table({"label_3_tp10_ls10": {"train": st_}}, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "label,train,train_uncertain,train_samples"
    assert lines[1] == "label_3_tp10_ls10,0.07/0.07/0.86,0.00,100"
