import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from ppgl_dispatch.adabn import (
    BnLayerState,
    adabn_update,
    adapt_sequence,
    as_feature_map,
    current_stats,
    load_state,
    save_state,
)

feature_maps = arrays(np.float64, st.tuples(st.just(3), st.integers(2, 8)), elements=st.floats(-1e3, 1e3))


def test_constant_channel():
    m, v = current_stats(np.full((2, 5), 4.0))
    assert np.array_equal(m, [4.0, 4.0]) and np.array_equal(v, [0.0, 0.0])


def test_two_point_variance():
    m, v = current_stats([[1.0, 3.0]])
    assert m[0] == 2.0 and v[0] == 1.0


def test_random_map_against_naive_oracle():
    x = np.random.default_rng(0).normal(0, 3, (8, 64))
    m, v = current_stats(x)
    for c in range(8):
        row = list(x[c])
        mean = sum(row) / len(row)
        var = sum((r - mean) ** 2 for r in row) / len(row)
        assert abs(m[c] - mean) < 1e-12 and abs(v[c] - var) < 1e-12


def test_spatial_size_must_be_at_least_two():
    with pytest.raises(ValueError):
        current_stats([[1.0], [2.0]])


def test_alpha_zero_and_one():
    s = BnLayerState([0.0, 1.0], [1.0, 2.0], 0.0)
    x = np.array([[3.0, 5.0], [0.0, 2.0]])
    assert adabn_update(s, x) == s
    s1 = adabn_update(BnLayerState([0.0, 1.0], [1.0, 2.0], 1.0), x)
    assert np.array_equal(s1.running_mean, [4.0, 1.0]) and np.array_equal(s1.running_var, [1.0, 1.0])


def test_default_momentum_example():
    s = adabn_update(BnLayerState([0.0], [1.0], 0.1), [[10.0, 10.0]])
    assert s.running_mean[0] == pytest.approx(1.0, abs=1e-15)


def test_input_state_unmodified():
    s = BnLayerState([0.0], [1.0], 0.1)
    adabn_update(s, [[10.0, 12.0]])
    assert s.running_mean[0] == 0.0 and s.running_var[0] == 1.0
    with pytest.raises(ValueError):
        s.running_mean[0] = 3.0


def test_sequence_examples():
    s = BnLayerState([0.0], [0.0], 0.1)
    assert adapt_sequence(s, []) is s
    s3 = adapt_sequence(s, [[[10.0, 10.0]]] * 3)
    assert s3.running_mean[0] == pytest.approx(2.71, abs=1e-12)


def test_order_sensitivity():
    s = BnLayerState([0.0], [0.0], 0.5)
    a, b = [[0.0, 2.0]], [[10.0, 30.0]]
    ab = adapt_sequence(s, [a, b])
    ba = adapt_sequence(s, [b, a])
    # hand fold: mean 0 -> 0.5 -> 10.25 versus 0 -> 10 -> 5.5
    assert ab.running_mean[0] == 10.25 and ba.running_mean[0] == 5.5


def test_channel_mismatch():
    with pytest.raises(ValueError):
        adabn_update(BnLayerState([0.0, 0.0], [1.0, 1.0]), [[1.0, 2.0]])


def test_invalid_state():
    with pytest.raises(ValueError):
        BnLayerState([0.0], [-1.0])
    with pytest.raises(ValueError):
        BnLayerState([0.0], [1.0], 1.5)


@given(feature_maps, st.floats(0, 1))
def test_convexity_and_nonnegative_variance(x, alpha):
    s = BnLayerState([1.0, -2.0, 0.0], [0.5, 1.0, 2.0], alpha)
    new = adabn_update(s, x)
    m, _ = current_stats(x)
    lo = np.minimum(s.running_mean, m) - 1e-9 * (1 + np.abs(m))
    hi = np.maximum(s.running_mean, m) + 1e-9 * (1 + np.abs(m))
    assert np.all((new.running_mean >= lo) & (new.running_mean <= hi))
    assert np.all(new.running_var >= 0)


def test_flat_values_reshape():
    assert as_feature_map([1, 2, 3, 4], channel_count=2).shape == (2, 2)


def test_save_load(tmp_path):
    s = BnLayerState([0.1, 0.2], [1.0, 3.0], 0.25)
    save_state(s, tmp_path / "s.json")
    assert load_state(tmp_path / "s.json") == s
