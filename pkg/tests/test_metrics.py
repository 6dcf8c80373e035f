import itertools
import warnings
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from keystroke.metrics import (
    EmptyMatrix,
    EmptyReference,
    confusion_matrix,
    levenshtein,
    nld,
    per_class_metrics,
    write_metrics_csv,
    write_nld_csv,
)

PANGRAM_REFERENCE = "the quick brown fox jumps over the lazy dog"
PANGRAM_PREDICTED = "the quick btosn fox jum s over the lazu dog"


def recursive_levenshtein(a: str, b: str) -> int:
    """Exhaustive recursion over the three edit operations."""

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        return min(go(i + 1, j) + 1, go(i, j + 1) + 1, go(i + 1, j + 1) + (a[i] != b[j]))

    return go(0, 0)


def test_confusion_matrix_counts():
    cm = confusion_matrix([0, 1, 1, 27], [0, 1, 2, 27])
    assert cm.shape == (28, 28) and cm.sum() == 4
    assert cm[1, 2] == 1 and cm[27, 27] == 1


def test_diagonal_is_perfect():
    m = per_class_metrics(np.diag(np.arange(1, 29)))
    assert m.macro_recall == m.macro_precision == m.macro_f1 == 1.0


def test_toy_two_class_matrix():
    cm = np.zeros((28, 28), int)
    cm[:2, :2] = [[8, 2], [3, 7]]
    with pytest.warns(UserWarning):
        m = per_class_metrics(cm)
    np.testing.assert_allclose(m.recall[:2], [0.8, 0.7])
    np.testing.assert_allclose(m.precision[:2], [8 / 11, 7 / 9])
    f1 = [2 * 0.8 * (8 / 11) / (0.8 + 8 / 11), 2 * 0.7 * (7 / 9) / (0.7 + 7 / 9)]
    np.testing.assert_allclose(m.f1[:2], f1)
    assert m.macro_recall == pytest.approx(0.75)
    assert np.isnan(m.recall[2:]).all()


def test_empty_matrix():
    with pytest.raises(EmptyMatrix):
        per_class_metrics(np.zeros((28, 28)))


@given(st.permutations(range(6)))
def test_permutation_matrix_macro_recall(perm):
    cm = np.eye(6, dtype=int)[list(perm)]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        m = per_class_metrics(cm)
    fixed = sum(1 for i, p in enumerate(perm) if i == p)
    assert m.macro_recall == pytest.approx(fixed / 6)


@pytest.mark.parametrize("a, b, d", [("", "", 0), ("abc", "abc", 0), ("", "hello", 5),
                                     ("kitten", "sitting", 3), ("flaw", "lawn", 2)])
def test_levenshtein_examples(a, b, d):
    assert levenshtein(a, b) == d == recursive_levenshtein(a, b)


def test_levenshtein_exhaustive_short():
    words = ["".join(p) for n in range(4) for p in itertools.product("abc", repeat=n)]
    for a in words:
        for b in words:
            assert levenshtein(a, b) == recursive_levenshtein(a, b)


short = st.text(alphabet="abc", max_size=8)


@settings(max_examples=300)
@given(short, short)
def test_levenshtein_matches_recursion(a, b):
    assert levenshtein(a, b) == recursive_levenshtein(a, b)


@settings(max_examples=200)
@given(short, short, short)
def test_levenshtein_is_a_metric(a, b, c):
    assert levenshtein(a, b) == levenshtein(b, a)
    assert (levenshtein(a, b) == 0) == (a == b)
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


def test_nld_examples():
    assert nld("hello", "hello") == 1.0
    assert nld("hello", "") == 0.0
    assert nld("ab", "xyzw") == pytest.approx(-1.0)  # not clamped
    with pytest.raises(EmptyReference):
        nld("", "x")


def test_nld_pangram_regression_constant():
    ld = recursive_levenshtein(PANGRAM_REFERENCE, PANGRAM_PREDICTED)
    assert ld == 4
    assert nld(PANGRAM_REFERENCE, PANGRAM_PREDICTED) == pytest.approx(1 - 4 / 43, abs=1e-12)
    assert nld(PANGRAM_REFERENCE, PANGRAM_PREDICTED) == pytest.approx(0.906977, abs=1e-6)


@given(st.text(alphabet="abc", min_size=1, max_size=8), short, short)
def test_nld_monotone_in_distance(t, i1, i2):
    if levenshtein(t, i1) <= levenshtein(t, i2):
        assert nld(t, i1) >= nld(t, i2)


def test_report_files(tmp_path):
    cm = np.diag(np.full(28, 3))
    write_metrics_csv(tmp_path / "m.csv", per_class_metrics(cm))
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "class,recall,precision,f1"
    assert lines[1].startswith("IDLE,") and lines[-1].startswith("macro,")
    assert len(lines) == 30
    write_nld_csv(tmp_path / "n.csv", [("s1", 40, 0.9)])
    assert (tmp_path / "n.csv").read_text().splitlines() == ["session,wpm,nld", "s1,40,0.9"]
