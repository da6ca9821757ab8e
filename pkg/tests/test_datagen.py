import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from labelleak.datagen import (CsvSchema, DwellWarning, LabeledStream, SlidingWindowTransformer, StreamSpec,
                               generate_stream, load_csv_stream, majority_label, null_majority_spec,
                               sliding_windows, write_csv_stream)
from labelleak.exceptions import CsvParseError, DomainError, SchemaError, SizeError
from oracles import majority_ref


def spec(prior, dwell=1.0, length=1000, d=2):
    k = len(prior)
    return StreamSpec(k, d, prior, dwell, np.arange(k * d, dtype=float).reshape(k, d), 1.0, length)


def runs_of(labels):
    cut = np.flatnonzero(np.diff(labels)) + 1
    starts = np.r_[0, cut]
    return labels[starts], np.diff(np.r_[starts, len(labels)])


def test_degenerate_prior_gives_single_label():
    s = generate_stream(spec([1.0, 0.0, 0.0], length=500), 0)
    assert set(s.labels.tolist()) == {0}


def test_empirical_frequencies_follow_prior():
    with pytest.warns(DwellWarning):  # 0.6 of the mass cannot alternate with the rest
        s = generate_stream(spec([0.6, 0.3, 0.1], length=100_000), 11)
    freq = np.bincount(s.labels, minlength=3) / len(s)
    np.testing.assert_allclose(freq, [0.6, 0.3, 0.1], atol=0.02)


def test_mean_run_length_matches_dwell():
    s = generate_stream(spec([0.4, 0.35, 0.25], dwell=20.0, length=1_000_000), 2)
    _, runs = runs_of(s.labels)
    assert abs(runs.mean() / 25 - 20.0) <= 2.0


def test_unequal_dwell_keeps_both_prior_and_dwell():
    sp = spec([0.2, 0.5, 0.3], dwell=[5.0, 20.0, 10.0], length=2_000_000)
    s = generate_stream(sp, 4)
    labs, runs = runs_of(s.labels)
    np.testing.assert_allclose(np.bincount(s.labels) / len(s), [0.2, 0.5, 0.3], atol=0.02)
    for k, dwell in enumerate([5.0, 20.0, 10.0]):
        assert runs[labs == k].mean() / 25 == pytest.approx(dwell, rel=0.1)


def test_infeasible_dwell_warns_and_keeps_prior():
    sp = spec([0.5, 0.3, 0.2], dwell=[5.0, 20.0, 20.0], length=500_000)
    with pytest.warns(DwellWarning):
        s = generate_stream(sp, 1)
    np.testing.assert_allclose(np.bincount(s.labels) / len(s), [0.5, 0.3, 0.2], atol=0.03)


def test_generate_is_deterministic_and_validated():
    sp = null_majority_spec(4, 3, 3000, seed=1)
    a, b = generate_stream(sp, 5), generate_stream(sp, 5)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)
    with pytest.raises(SizeError):
        generate_stream(spec([1.0], length=0), 0)
    with pytest.raises(DomainError):
        generate_stream(spec([0.7, 0.7]), 0)
    with pytest.raises(DomainError):
        generate_stream(spec([0.5, 0.5], dwell=0.5), 0)


def test_null_majority_spec_shape():
    sp = null_majority_spec(5, 3, 100, null_weight=0.4)
    assert sp.class_prior[0] == pytest.approx(0.4)
    assert sp.class_prior.sum() == pytest.approx(1.0)
    assert np.all(np.diff(sp.class_prior[1:]) < 0)
    assert StreamSpec.from_dict(sp.to_dict()).to_dict() == sp.to_dict()


def test_stream_invariants():
    with pytest.raises(SizeError):
        LabeledStream("a", np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(DomainError):
        LabeledStream("a", np.zeros((2, 2)), [0, 3], class_count=2)
    s = LabeledStream("a", np.zeros((2, 2)), [0, 1])
    assert s.class_count == 2 and s.feature_dim == 2


def test_windows_of_100_sample_stream():
    s = LabeledStream("a", np.arange(200.0).reshape(100, 2), np.zeros(100, dtype=int))
    w = sliding_windows(s, 50, 0.5)
    assert w.starts.tolist() == [0, 25, 50]
    assert w.features.shape == (3, 2, 50)
    np.testing.assert_array_equal(w.features[1, 0], np.arange(50.0, 150.0, 2))
    assert w.labels.tolist() == [0, 0, 0]
    assert w.stride == 25


def test_window_longer_than_stream():
    s = LabeledStream("a", np.zeros((10, 1)), np.zeros(10, dtype=int))
    with pytest.raises(SizeError):
        sliding_windows(s, 50, 0.5)
    with pytest.raises(DomainError):
        sliding_windows(s, 5, 1.0)


def test_majority_tie_goes_to_last_tied_label():
    assert majority_label([0, 0, 1, 1]) == 1
    assert majority_label([1, 1, 0, 0]) == 0
    assert majority_label([2, 0, 0, 2, 1]) == 2
    assert majority_label([0, 0, 0, 1]) == 0


@given(st.lists(st.integers(0, 3), min_size=6, max_size=120), st.integers(2, 12), st.sampled_from([0.0, 0.25, 0.5]))
def test_windows_match_brute_force(labels, w, overlap):
    labels = np.array(labels)
    if w > len(labels):
        return
    s = LabeledStream("p", np.zeros((len(labels), 1)), labels, class_count=4)
    ws = sliding_windows(s, w, overlap)
    stride = max(1, int(round(w * (1 - overlap))))
    assert len(ws) == (len(labels) - w) // stride + 1
    assert np.all(np.diff(ws.starts) == stride)
    for start, lab in zip(ws.starts, ws.labels):
        assert lab == majority_ref(labels[start:start + w].tolist())


def test_transformer_matches_function(har_windows):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((300, 3))
    y = rng.integers(0, 3, 300)
    t = SlidingWindowTransformer(50, 0.5)
    ws = sliding_windows(LabeledStream("x", X, y, class_count=3), 50, 0.5)
    np.testing.assert_array_equal(t.fit_transform(X), ws.flat())
    np.testing.assert_array_equal(t.window_labels(y, 3), ws.labels)
    assert t.get_params() == {"window_length": 50, "overlap_fraction": 0.5}


def test_csv_three_rows(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("ax,ay,act\n1.0,2.0,walk\n3,4,null\n5,6,walk\n")
    s = load_csv_stream(p, CsvSchema(label_column="act", label_map={"null": 0, "walk": 1}))
    assert len(s) == 3 and s.feature_dim == 2
    assert s.labels.tolist() == [1, 0, 1]
    assert s.client_id == "s"


def test_csv_errors(tmp_path):
    schema = CsvSchema(label_map={"a": 0, "b": 1})
    p = tmp_path / "h.csv"
    p.write_text("x,label\n")
    with pytest.raises(SizeError):
        load_csv_stream(p, schema)
    p.write_text("x,label\n1.0,a\noops,b\n")
    with pytest.raises(CsvParseError) as err:
        load_csv_stream(p, schema)
    assert err.value.row == 3
    p.write_text("x,label\n1.0,zzz\n")
    with pytest.raises(SchemaError):
        load_csv_stream(p, schema)
    with pytest.raises(OSError):
        load_csv_stream(tmp_path / "missing.csv", schema)
    p.write_text("x,y\n1,2\n")
    with pytest.raises(SchemaError):
        load_csv_stream(p, schema)
    with pytest.raises(SchemaError):
        load_csv_stream(p)  # no sidecar


def test_csv_round_trip(tmp_path):
    s = generate_stream(null_majority_spec(4, 3, 2000, seed=2), 9, client_id="c07")
    path = write_csv_stream(s, tmp_path / "c07.csv")
    assert json.loads((tmp_path / "c07.csv.labels.json").read_text()) == {"0": 0, "1": 1, "2": 2, "3": 3}
    back = load_csv_stream(path)
    assert back.client_id == "c07"
    np.testing.assert_array_equal(back.features, s.features)
    np.testing.assert_array_equal(back.labels, s.labels)
