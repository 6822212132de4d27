import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from ssdal.attributes import (MIN_REAL, attribute_accuracy, binarize_threshold, binarize_top_p, binarize_top_p_rows,
                              cosine_distance, hamming, squared_euclidean)
from ssdal.errors import ShapeError, ValidationError

scores_st = st.lists(st.integers(-5, 5).map(float), min_size=1, max_size=12)


def test_top_p_example():
    np.testing.assert_array_equal(binarize_top_p([0.9, 0.8, 0.1], 2), [1, 1, 0])


def test_top_p_ties_lowest_index():
    np.testing.assert_array_equal(binarize_top_p([1.0, 1.0, 1.0, 0.0], 2), [1, 1, 0, 0])


@pytest.mark.parametrize("p", [0, 4])
def test_top_p_range(p):
    with pytest.raises(ValidationError):
        binarize_top_p([1.0, 2.0, 3.0], p)


@settings(max_examples=300)
@given(scores_st, st.data())
def test_top_p_count_and_monotonicity(s, data):
    p = data.draw(st.integers(1, len(s)))
    bits = binarize_top_p(s, p)
    assert bits.sum() == p
    picked = np.flatnonzero(bits)
    i = int(data.draw(st.sampled_from(picked.tolist())))
    raised = list(s)
    raised[i] += data.draw(st.floats(0, 10))
    assert binarize_top_p(raised, p)[i] == 1


@settings(max_examples=200)
@given(scores_st, st.integers(1, 3))
def test_top_p_rows_matches_per_row(s, p):
    assume(p <= len(s))
    m = np.array([s, s[::-1]])
    rows = binarize_top_p_rows(m, p)
    np.testing.assert_array_equal(rows[0], binarize_top_p(m[0], p))
    np.testing.assert_array_equal(rows[1], binarize_top_p(m[1], p))


def test_threshold_strict():
    np.testing.assert_array_equal(binarize_threshold([-1.0, 0.0, 2.0], 0.0), [0, 0, 1])
    np.testing.assert_array_equal(binarize_threshold([-1e300, 0.0], MIN_REAL), [1, 1])


@settings(max_examples=200)
@given(scores_st, st.integers(0, 11), st.floats(0, 5), st.floats(-5, 5))
def test_threshold_monotone(s, i, bump, tau):
    i %= len(s)
    before = binarize_threshold(s, tau)
    raised = list(s)
    raised[i] += bump
    after = binarize_threshold(raised, tau)
    assert after[i] >= before[i]


def test_cosine_examples():
    assert cosine_distance([1, 0, 1], [1, 0, 1]) == pytest.approx(0.0, abs=1e-15)
    assert cosine_distance([0, 0], [1, 1]) == 1.0
    with pytest.raises(ShapeError):
        cosine_distance([1, 2], [1, 2, 3])


vec_st = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3)


@settings(max_examples=200)
@given(vec_st, vec_st, st.floats(0.01, 100))
def test_cosine_symmetric_and_scale_invariant(a, b, c):
    a, b = np.array(a), np.array(b)
    assume(np.linalg.norm(a) > 1e-3 and np.linalg.norm(b) > 1e-3)
    assert cosine_distance(a, b) == pytest.approx(cosine_distance(b, a), abs=1e-12)
    assert cosine_distance(c * a, b) == pytest.approx(cosine_distance(a, b), abs=1e-9)


@settings(max_examples=100)
@given(st.lists(st.integers(0, 1), min_size=4, max_size=4), st.lists(st.integers(0, 1), min_size=4, max_size=4))
def test_cosine_binary_range(a, b):
    assert 0.0 <= cosine_distance(a, b) <= 1.0 + 1e-12


def test_squared_euclidean_and_hamming():
    assert squared_euclidean([1, 2], [1, 2]) == 0.0
    assert squared_euclidean([0, 0], [3, 4]) == 25.0
    assert hamming([1, 0, 1], [0, 0, 1]) == 1


def test_attribute_accuracy_examples():
    assert attribute_accuracy([0.9, 0.1, 0.8], [1, 0, 1]) == 1.0
    assert attribute_accuracy([0.9, 0.8, 0.1], [1, 0, 1]) == 0.5
    with pytest.raises(ValidationError):
        attribute_accuracy([0.1, 0.2], [0, 0])


@settings(max_examples=200)
@given(scores_st, st.data())
def test_attribute_accuracy_is_one_iff_top_n_matches(s, data):
    gt = np.array(data.draw(st.lists(st.integers(0, 1), min_size=len(s), max_size=len(s))))
    assume(gt.sum() > 0)
    acc = attribute_accuracy(s, gt)
    top = binarize_top_p(s, int(gt.sum()))
    assert (acc == 1.0) == bool(np.array_equal(top, gt))
