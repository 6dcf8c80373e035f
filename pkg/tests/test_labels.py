import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from keystroke.labels import (
    IDLE,
    NUM_CLASSES,
    REFERENCE_COUNTS,
    SPACE,
    DatasetStats,
    KeyClass,
    KeyEdge,
    UnsortedInput,
    ZeroClassCount,
    align_ground_truth,
    class_weights,
    key_to_class,
    load_keylog_csv,
    one_hot,
    one_hot_sequence,
    save_keylog_csv,
    sliding_windows,
    smooth_labels,
    window_starts,
)


def test_class_order():
    assert KeyClass.IDLE == 0 and KeyClass.A == 1 and KeyClass.Z == 26 and KeyClass.SPACE == 27
    assert len(KeyClass) == NUM_CLASSES


@pytest.mark.parametrize("c, hot", [(IDLE, 0), (KeyClass.A, 1), (SPACE, 27)])
def test_one_hot(c, hot):
    v = one_hot(c)
    assert v[hot] == 1.0 and v.sum() == 1.0


def test_equal_counts_give_unit_weights():
    np.testing.assert_allclose(class_weights(DatasetStats(np.full(28, 50))), 1.0)


def test_reference_table_weights():
    stats = DatasetStats(REFERENCE_COUNTS)
    assert stats.total == 234000
    w = class_weights(stats)
    # N / (k * n_i) evaluated by hand from the table counts
    assert w[IDLE] == pytest.approx(234000 / (28 * 183655), abs=1e-12)
    assert w[IDLE] == pytest.approx(0.045507, abs=1e-5)
    assert w[SPACE] == pytest.approx(1.11966, abs=1e-5)


def test_zero_count_raises():
    counts = np.full(28, 10)
    counts[5] = 0
    with pytest.raises(ZeroClassCount):
        class_weights(DatasetStats(counts))
    mask = np.ones(28, bool)
    mask[5] = False
    assert class_weights(DatasetStats(counts), mask)[5] == 0.0


@settings(max_examples=50)
@given(st.lists(st.integers(1, 10_000), min_size=28, max_size=28))
def test_weighted_counts_sum_to_total(counts):
    stats = DatasetStats(counts)
    w = class_weights(stats)
    assert (w * stats.counts).sum() == pytest.approx(stats.total, rel=1e-12)


def test_align_examples():
    assert list(align_ground_truth([], [0, 10, 20])) == [0, 0, 0]
    log = [KeyEdge(100, "a", "down"), KeyEdge(180, "a", "up")]
    assert list(align_ground_truth(log, [90, 120, 150, 200])) == [IDLE, 1, 1, IDLE]


def test_align_synthesized_hold():
    assert list(align_ground_truth([KeyEdge(100, "a")], [150, 250])) == [1, IDLE]
    # a down edge with no up edge gets the same 100 ms hold
    assert list(align_ground_truth([KeyEdge(100, "a", "down")], [150, 201])) == [1, IDLE]


def test_align_rollover_prefers_latest_down():
    log = [KeyEdge(100, "a", "down"), KeyEdge(150, "s", "down"),
           KeyEdge(200, "a", "up"), KeyEdge(260, "s", "up")]
    out = align_ground_truth(log, [120, 160, 210, 270])
    assert list(out) == [1, 19, 19, IDLE]


def test_align_space_token_and_unsorted():
    assert align_ground_truth([KeyEdge(0, "SPACE", "down"), KeyEdge(50, "SPACE", "up")], [10])[0] == SPACE
    with pytest.raises(UnsortedInput):
        align_ground_truth([], [10, 5])
    with pytest.raises(UnsortedInput):
        align_ground_truth([KeyEdge(50, "a"), KeyEdge(10, "b")], [0])


@given(st.lists(st.integers(0, 5000), max_size=50).map(sorted))
def test_align_length(times):
    assert len(align_ground_truth([KeyEdge(100, "q")], times)) == len(times)


def test_keylog_round_trip(tmp_path):
    log = [KeyEdge(10, "a", "down"), KeyEdge(90, "a", "up"), KeyEdge(120, "SPACE", "down")]
    save_keylog_csv(tmp_path / "k.csv", log)
    assert load_keylog_csv(tmp_path / "k.csv") == log
    bare = [KeyEdge(10, "a"), KeyEdge(400, "b")]
    save_keylog_csv(tmp_path / "b.csv", bare)
    assert load_keylog_csv(tmp_path / "b.csv") == bare


def test_smoothing_all_idle_unchanged():
    seq = one_hot_sequence([0] * 10)
    np.testing.assert_array_equal(smooth_labels(seq, 3), seq)


def test_smoothing_ramp_example():
    seq = one_hot_sequence([0] * 5 + [1] * 3 + [0] * 5)
    out = smooth_labels(seq, 3)
    a = KeyClass.A
    # distance d from the run: (d/4) idle + (1 - d/4) key
    for d, key_w in ((1, 0.75), (2, 0.5), (3, 0.25)):
        for j in (5 - d, 7 + d):
            assert out[j, a] == pytest.approx(key_w)
            assert out[j, IDLE] == pytest.approx(1 - key_w)
    np.testing.assert_array_equal(out[0], one_hot(IDLE))
    np.testing.assert_array_equal(out[12], one_hot(IDLE))
    np.testing.assert_array_equal(out[5:8], seq[5:8])


def test_smoothing_truncated_at_sequence_start():
    seq = one_hot_sequence([1, 1, 0, 0, 0, 0])
    out = smooth_labels(seq, 3)
    np.testing.assert_array_equal(out[:2], seq[:2])
    assert out[2, 1] == pytest.approx(0.75)


def test_smoothing_adjacent_runs_not_blended_into_each_other():
    seq = one_hot_sequence([0, 1, 1, 2, 2, 0])
    out = smooth_labels(seq, 2)
    np.testing.assert_array_equal(out[1:5], seq[1:5])
    assert out[0, 1] > 0 and out[5, 2] > 0


@settings(max_examples=100)
@given(st.lists(st.sampled_from([0, 0, 0, 0, 1, 5, 27]), min_size=1, max_size=60), st.integers(1, 5))
def test_smoothing_properties(classes, s):
    seq = one_hot_sequence(classes)
    out = smooth_labels(seq, s)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
    assert (out >= 0).all() and (out <= 1).all()
    keys = np.asarray(classes) != 0
    np.testing.assert_array_equal(out[keys], seq[keys])


def test_argmax_near_boundary_stays_on_key():
    out = smooth_labels(one_hot_sequence([0] * 4 + [3] * 2 + [0] * 4), 3)
    assert out[3].argmax() == 3 and out[6].argmax() == 3


@pytest.mark.parametrize("n, count", [(128, 1), (256, 3), (100, 0)])
def test_window_counts(n, count):
    assert len(window_starts(n)) == count


def test_window_starts_256():
    assert window_starts(256) == [0, 64, 128]


@given(st.integers(0, 5000), st.integers(1, 300), st.integers(1, 300))
def test_window_tiling(n, size, step):
    starts = window_starts(n, size, step)
    expected = (n - size) // step + 1 if n >= size else 0
    assert len(starts) == expected
    for a, b in zip(starts, starts[1:]):
        assert b - a == step
        assert (a + size) - b == size - step
    if starts:
        assert starts[0] == 0 and starts[-1] + size <= n


def test_sliding_windows_payload():
    lm = np.arange(300 * 126, dtype=float).reshape(300, 2, 21, 3)
    lab = one_hot_sequence(np.zeros(300, int))
    wins = sliding_windows(lm, lab, "rec", 128, 64)
    assert [w.start for w in wins] == [0, 64, 128]
    assert all(w.landmarks.shape == (128, 2, 21, 3) and w.labels.shape == (128, 28) for w in wins)
    np.testing.assert_array_equal(wins[1].landmarks, lm[64:192])
    assert {w.recording_id for w in wins} == {"rec"}


def test_key_to_class():
    assert key_to_class("a") == 1 and key_to_class(" ") == SPACE
    with pytest.raises(ValueError):
        key_to_class("?")
