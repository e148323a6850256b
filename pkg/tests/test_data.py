import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timessm.data import (
    NAMED_SPLITS,
    DatasetFrame,
    ParseError,
    RunConfig,
    Scaler,
    TooShort,
    load_csv,
    load_dataset,
    metrics,
    n_windows,
    ratio_split,
    sine_frame,
    window_arrays,
    windows,
    write_csv,
)


def write(path, text):
    path.write_text(text)
    return path


def numeric_csv(tmp_path, rows, channels=2, stamps=False, name="d.csv"):
    rng = np.random.default_rng(rows)
    lines = [",".join((["date"] if stamps else []) + [f"c{j}" for j in range(channels)])]
    for i in range(rows):
        cells = [f"2020-01-01 {i % 24:02d}:00"] if stamps else []
        lines.append(",".join(cells + [repr(float(v)) for v in rng.standard_normal(channels)]))
    return write(tmp_path / name, "\n".join(lines) + "\n")


def test_ratio_split_small():
    assert ratio_split(10) == (7, 1, 2)
    assert sum(ratio_split(1234)) == 1234


def test_load_plain_csv(tmp_path):
    frame = load_csv(numeric_csv(tmp_path, 10))
    assert frame.values.shape == (10, 2)
    assert frame.split_sizes == (7, 1, 2)
    assert frame.timestamps is None
    assert frame.columns == ["c0", "c1"]


def test_timestamp_column_is_skipped(tmp_path):
    frame = load_csv(numeric_csv(tmp_path, 12, channels=3, stamps=True))
    assert frame.values.shape == (12, 3)
    assert frame.timestamps[1] == "2020-01-01 01:00"
    assert frame.columns == ["c0", "c1", "c2"]


def test_named_split_sizes(tmp_path):
    frame = load_csv(numeric_csv(tmp_path, 14400, channels=1), split="ett")
    assert frame.split_sizes == NAMED_SPLITS["ett"] == (8545, 2881, 2881)


def test_named_split_needs_enough_rows(tmp_path):
    with pytest.raises(TooShort):
        load_csv(numeric_csv(tmp_path, 100), split="ett")


def test_unknown_split_name(tmp_path):
    with pytest.raises(ValueError):
        load_csv(numeric_csv(tmp_path, 10), split="weekly")


def test_parse_error_location(tmp_path):
    path = write(tmp_path / "bad.csv", "a,b\n1,2\n3,oops\n5,6\n")
    with pytest.raises(ParseError) as info:
        load_csv(path)
    assert (info.value.row, info.value.col, info.value.cell) == (3, 2, "oops")


def test_missing_cell_rejected(tmp_path):
    with pytest.raises(ParseError):
        load_csv(write(tmp_path / "gap.csv", "a,b\n1,2\n3\n"))


def test_non_finite_cell_rejected(tmp_path):
    with pytest.raises(ParseError):
        load_csv(write(tmp_path / "nan.csv", "a\n1\nnan\n"))


def test_too_short(tmp_path):
    with pytest.raises(TooShort):
        load_csv(numeric_csv(tmp_path, 50), min_rows=192)
    with pytest.raises(TooShort):
        load_csv(write(tmp_path / "empty.csv", "a,b\n"))


def test_window_count_single_split():
    frame = DatasetFrame("x", np.arange(200.0), split_sizes=(200, 0, 0))
    pairs = list(windows(frame, 96, 96, "train"))
    assert len(pairs) == n_windows(200, 96, 96) == 9
    np.testing.assert_array_equal(pairs[0][0][:, 0], np.arange(96))
    np.testing.assert_array_equal(pairs[-1][1][:, 0], np.arange(104, 200))


def test_zero_horizon_rejected():
    frame = DatasetFrame("x", np.arange(200.0), split_sizes=(200, 0, 0))
    with pytest.raises(ValueError):
        list(windows(frame, 96, 0, "train"))


def test_test_windows_reach_back_into_validation():
    frame = DatasetFrame("x", np.arange(100.0), split_sizes=(70, 10, 20))
    inputs, targets = window_arrays(frame, 8, 4, "test")
    assert inputs[0, 0, 0] == 72.0 and targets[0, 0, 0] == 80.0
    assert targets[-1, -1, 0] == 99.0
    assert len(inputs) == 20 - 4 + 1


def test_empty_split_is_too_short():
    frame = DatasetFrame("x", np.arange(20.0), split_sizes=(14, 2, 4))
    with pytest.raises(TooShort):
        window_arrays(frame, 8, 8, "val")


def test_split_determinism(tmp_path):
    path = numeric_csv(tmp_path, 300)
    a = window_arrays(load_csv(path), 24, 12, "val")
    b = window_arrays(load_csv(path), 24, 12, "val")
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_scaler_uses_training_rows():
    values = np.concatenate([np.zeros(7), [100.0, 100.0, 100.0]]) + np.tile([0, 1], 5)
    frame = DatasetFrame("x", values, split_sizes=(7, 1, 2))
    scaled = Scaler.fit(frame).transform(frame)
    assert abs(scaled.values[:7].mean()) < 1e-12
    assert scaled.values[-1, 0] > 100


def test_metric_examples():
    t = np.random.default_rng(0).standard_normal((4, 6, 3))
    assert metrics(t, t) == (0.0, 0.0)
    assert metrics(t + 1, t) == pytest.approx((1.0, 1.0), abs=1e-15)
    alternating = np.where(np.arange(t.size).reshape(t.shape) % 2, -1.0, 1.0)
    assert metrics(t + alternating, t) == pytest.approx((1.0, 1.0), abs=1e-15)
    with pytest.raises(ValueError):
        metrics(t, t[:2])


def brute_metrics(pred, target):
    sq = ab = 0.0
    count = 0
    for p, q in zip(pred.ravel().tolist(), target.ravel().tolist()):
        sq += (p - q) ** 2
        ab += abs(p - q)
        count += 1
    return sq / count, ab / count


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5), st.integers(1, 30))
def test_metrics_match_brute_force(seed, a, b):
    rng = np.random.default_rng(seed)
    pred, target = rng.standard_normal((a, b, 2)), rng.standard_normal((a, b, 2))
    got, expected = metrics(pred, target), brute_metrics(pred, target)
    assert abs(got[0] - expected[0]) < 1e-12 and abs(got[1] - expected[1]) < 1e-12


def test_write_csv_marker_and_round_trip(tmp_path):
    path = tmp_path / "out.csv"
    values = np.random.default_rng(1).standard_normal((5, 2))
    write_csv(path, values, ["a", "b"], "forecast")
    assert path.read_text().splitlines()[0] == "# timessm-v1 forecast"
    np.testing.assert_array_equal(load_csv(path).values, values)


def test_parse_error_rows_count_marker_line(tmp_path):
    with pytest.raises(ParseError) as info:
        load_csv(write(tmp_path / "m.csv", "# timessm-v1 data\na\n1\nx\n"))
    assert info.value.row == 4


def test_synthetic_datasets():
    sine = load_dataset("sine")
    assert sine.values.shape == (2000, 2) and sine.split_sizes == (1400, 200, 400)
    assert np.max(np.abs(sine.values)) <= 1.0
    assert np.array_equal(load_dataset("arma", seed=3).values, load_dataset("arma", seed=3).values)
    assert np.array_equal(sine_frame(seed=1).values, sine_frame(seed=1).values)


def test_run_config_learning_rate_grid():
    for lr in (1e-4, 5e-4, 1e-3):
        assert RunConfig(lr=lr).lr == lr
    with pytest.raises(ValueError):
        RunConfig(lr=1e-2)


def test_run_config_flat_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"lr": 5e-4, "d_model": 32, "variant": "legs-complex", "horizon": 192}))
    cfg = RunConfig.from_json(path, overrides={"horizon": 96})
    assert cfg.lr == 5e-4 and cfg.model.d_model == 32 and cfg.model.horizon == 96
    assert cfg.model.variant.value == "legs-complex"
    assert RunConfig.from_flat(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        RunConfig.from_flat({"learning_rate": 1e-3})
