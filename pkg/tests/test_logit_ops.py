import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sld.logit_ops import (
    ConditionalSwapRule,
    SchemeParams,
    SwapRule,
    alpha_gap_batch,
    conditional_swap,
    label_smoothing_target,
    multi_swap,
    rule_index_batch,
    scale_ground_truth,
    swap_rate,
    swap_to_target,
    swap_to_target_batch,
)
from sld.numeric import ShapeError, softmax_temp


@st.composite
def row_and_target(draw, min_c=2, max_c=12):
    C = draw(st.integers(min_c, max_c))
    z = draw(arrays(np.float64, C, elements=st.floats(-20, 20, allow_nan=False)))
    t = draw(st.integers(0, C - 1))
    return z, t


# ---------------------------------------------------------------- single swap


def test_swap_wrong_prediction():
    np.testing.assert_array_equal(swap_to_target([2.0, 5.0, 1.0], 0), [5.0, 2.0, 1.0])


def test_swap_correct_prediction_is_unchanged():
    np.testing.assert_array_equal(swap_to_target([5.0, 2.0, 1.0], 0), [5.0, 2.0, 1.0])


def test_swap_tie_uses_lowest_index():
    np.testing.assert_array_equal(swap_to_target([1.0, 3.0, 3.0], 0), [3.0, 1.0, 3.0])


def test_swap_no_swap_when_target_ties_the_max():
    np.testing.assert_array_equal(swap_to_target([1.0, 3.0, 3.0], 2), [1.0, 3.0, 3.0])


def test_swap_index_error():
    with pytest.raises(IndexError):
        swap_to_target([1.0, 2.0], 2)


@given(row_and_target())
def test_swap_properties(zt):
    z, t = zt
    out = swap_to_target(z, t)
    assert sorted(out.tolist()) == sorted(z.tolist())
    assert out[t] == out.max()
    if not np.any(z == z.max()) or np.sum(z == z.max()) == 1:
        assert out.argmax() == t
    top = int(z.argmax())
    untouched = [j for j in range(len(z)) if j not in (t, top)]
    assert out[untouched].tobytes() == z[untouched].tobytes()
    np.testing.assert_array_equal(swap_to_target(out, t), out)


@given(row_and_target(), st.floats(0.5, 8.0))
def test_swap_commutes_with_softmax(zt, T):
    z, t = zt
    top = int(z.argmax())
    p = softmax_temp(z, T)
    if z[t] < z[top]:
        p[[t, top]] = p[[top, t]]
    np.testing.assert_allclose(softmax_temp(swap_to_target(z, t), T), p, rtol=0, atol=1e-12)


def test_batch_swap_matches_row_swap():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(50, 7))
    t = rng.integers(0, 7, size=50)
    batch = swap_to_target_batch(z, t)
    for i in range(50):
        np.testing.assert_array_equal(batch[i], swap_to_target(z[i], t[i]))


def test_batch_shape_errors():
    with pytest.raises(ShapeError):
        swap_to_target_batch(np.zeros((3, 4)), [0, 1])


# ---------------------------------------------------------------- multi swap


def _cascade_oracle(z, t, depth):
    """Hand-executed cascade: rank non-targets once, then walk deepest-first."""
    z = list(z)
    others = sorted((j for j in range(len(z)) if j != t), key=lambda j: (-z[j], j))
    for k in range(depth, 0, -1):
        j = others[k - 1]
        if z[t] < z[j]:
            z[t], z[j] = z[j], z[t]
    return z


def test_multi_swap_depth_two_example():
    np.testing.assert_array_equal(multi_swap([1.0, 5.0, 4.0, 3.0], 0, 2), [5.0, 4.0, 1.0, 3.0])


def test_multi_swap_depth_one_equals_single_swap():
    rng = np.random.default_rng(1)
    for _ in range(200):
        z = rng.normal(size=6)
        t = int(rng.integers(6))
        np.testing.assert_array_equal(multi_swap(z, t, 1), swap_to_target(z, t))


def test_multi_swap_unchanged_when_already_correct():
    z = np.array([9.0, 1.0, 4.0, 3.0])
    for depth in (1, 2, 3):
        np.testing.assert_array_equal(multi_swap(z, 0, depth), z)


def test_multi_swap_matches_cascade_oracle():
    rng = np.random.default_rng(2)
    for _ in range(500):
        C = int(rng.integers(3, 9))
        z = np.round(rng.normal(size=C), 1)
        t = int(rng.integers(C))
        depth = int(rng.integers(1, C))
        out = multi_swap(z, t, depth)
        np.testing.assert_array_equal(out, _cascade_oracle(z, t, depth))
        assert out[t] == out.max()


def test_multi_swap_depth_out_of_range():
    with pytest.raises(ValueError):
        multi_swap([1.0, 2.0, 3.0], 0, 3)
    with pytest.raises(ValueError):
        SwapRule(depth=0)


# ---------------------------------------------------------------- conditional swap


def test_conditional_more_than_zero_is_plain_swap():
    rng = np.random.default_rng(3)
    rule = ConditionalSwapRule(0.0, "more_than")
    for _ in range(300):
        z = rng.normal(size=5)
        t = int(rng.integers(5))
        if z.argmax() != t:
            assert conditional_swap(z, t, rule).tobytes() == swap_to_target(z, t).tobytes()


def test_conditional_less_than_zero_is_identity():
    z = np.array([0.0, 3.0, 1.0])
    np.testing.assert_array_equal(conditional_swap(z, 0, ConditionalSwapRule(0.0, "less_than")), z)


def test_conditional_alpha_example(golden):
    alpha = alpha_gap_batch(np.array([[0.0, 1.0]]), [0])[0]
    assert alpha == pytest.approx(float(golden["alpha_z_0_1_t_0"]), abs=1e-15)
    out = conditional_swap([0.0, 1.0], 0, ConditionalSwapRule(0.5, "less_than"))
    np.testing.assert_array_equal(out, [1.0, 0.0])
    out = conditional_swap([0.0, 1.0], 0, ConditionalSwapRule(0.4, "less_than"))
    np.testing.assert_array_equal(out, [0.0, 1.0])


@pytest.mark.parametrize("threshold", [-0.1, 1.5])
def test_conditional_threshold_range(threshold):
    with pytest.raises(ValueError):
        ConditionalSwapRule(threshold, "less_than")


def test_conditional_mode_validation():
    with pytest.raises(ValueError):
        ConditionalSwapRule(0.5, "between")


def test_rule_with_condition_and_depth():
    z = np.array([[1.0, 5.0, 4.0, 3.0], [1.0, 1.1, 0.9, 0.8]])
    rule = SwapRule(2, ConditionalSwapRule(0.5, "less_than"))
    out = np.take_along_axis(z, rule_index_batch(z, [0, 0], rule), axis=1)
    # row 0: alpha is large -> untouched; row 1: alpha small -> cascaded
    np.testing.assert_array_equal(out[0], z[0])
    np.testing.assert_array_equal(out[1], [1.1, 1.0, 0.9, 0.8])


# ---------------------------------------------------------------- schemes


def test_label_smoothing_row():
    row = label_smoothing_target(0, SchemeParams(epsilon=0.1), 100)
    assert row[0] == 0.9
    np.testing.assert_array_equal(row[1:], np.full(99, 0.1 / 100))


def test_label_smoothing_sum_is_not_renormalized():
    for C in (2, 10, 100):
        eps = 0.1
        row = label_smoothing_target(1, SchemeParams(epsilon=eps), C)
        direct = 0.0
        for v in row:
            direct += float(v)
        assert direct == pytest.approx((1 - eps) + eps * (C - 1) / C, abs=1e-15)


def test_label_smoothing_small_epsilon_tends_to_one_hot():
    row = label_smoothing_target(2, SchemeParams(epsilon=1e-12), 4)
    np.testing.assert_allclose(row, [0, 0, 1, 0], atol=1e-11)


@pytest.mark.parametrize("bad", [dict(epsilon=0.0), dict(epsilon=1.0), dict(w=0.0), dict(n=1.0)])
def test_scheme_params_validation(bad):
    with pytest.raises(ValueError):
        SchemeParams(**bad)


@pytest.mark.parametrize(
    "scheme, expected",
    [
        ("ega", [4.0, 5.0, 1.0]),
        ("egr", [1.0, 5.0, 1.0]),
        ("ga", [2.0 + 2.0 * 0.1, 5.0, 1.0]),
        ("ma", [5.0 + 5.0 * 0.1, 5.0, 1.0]),
    ],
)
def test_scale_ground_truth_closed_forms(scheme, expected):
    out = scale_ground_truth([2.0, 5.0, 1.0], 0, scheme, SchemeParams(epsilon=0.1, w=0.1, n=2.0))
    np.testing.assert_array_equal(out, expected)


def test_ma_makes_target_the_argmax():
    out = scale_ground_truth([2.0, 5.0, 1.0], 0, "ma", SchemeParams())
    assert out.argmax() == 0


def test_scale_unknown_scheme():
    with pytest.raises(ValueError):
        scale_ground_truth([2.0, 5.0, 1.0], 0, "lsr", SchemeParams())


# ---------------------------------------------------------------- swap rate


def test_swap_rate_extremes():
    z = np.eye(4) * 3
    assert swap_rate(z, [0, 1, 2, 3]) == 0.0
    assert swap_rate(z, [1, 2, 3, 0]) == 1.0


def test_swap_rate_matches_counting_oracle():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(257, 9))
    t = rng.integers(0, 9, size=257)
    wrong = 0
    for row, target in zip(z, t):
        best = 0
        for j in range(len(row)):
            if row[j] > row[best]:
                best = j
        wrong += best != target
    assert swap_rate(z, t) == wrong / 257


def test_swap_rate_length_mismatch():
    with pytest.raises(ShapeError):
        swap_rate(np.zeros((3, 2)), [0])
