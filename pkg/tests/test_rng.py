import numpy as np
from hypothesis import given, strategies as st

from rwre import rng

words = st.integers(min_value=-2**62, max_value=2**62)


@given(st.integers(0, 2**64 - 1), words, words)
def test_uniform_open_interval_and_pure(key, a, b):
    u = rng.uniform(key, np.int64(a), np.int64(b))
    assert 0.0 < u[0] < 1.0
    assert u[0] == rng.uniform(key, np.int64(a), np.int64(b))[0]


def test_batching_does_not_change_draws():
    ids = np.arange(1000, dtype=np.int64)
    whole = rng.uniform(5, ids, np.int64(3))
    parts = np.concatenate([rng.uniform(5, ids[i:i + 7], np.int64(3)) for i in range(0, 1000, 7)])
    assert np.array_equal(whole, parts)


def test_word_order_matters():
    assert rng.uniform(1, np.int64(2), np.int64(3))[0] != rng.uniform(1, np.int64(3), np.int64(2))[0]


def test_uniform_moments():
    u = rng.uniform(42, np.arange(200_000, dtype=np.int64))
    assert abs(u.mean() - 0.5) < 4 * np.sqrt(1 / 12 / len(u))
    assert abs(u.var() - 1 / 12) < 2e-3
    # no correlation between consecutive counters
    assert abs(np.corrcoef(u[:-1], u[1:])[0, 1]) < 0.01


def test_derive_key_and_string_label_stable():
    assert rng.derive_key(3, 1, 2) == rng.derive_key(3, 1, 2)
    assert rng.derive_key(3, 1, 2) != rng.derive_key(3, 2, 1)
    assert rng.string_label("env") == rng.string_label("env")
    assert rng.string_label("env") != rng.string_label("paths")
    assert 0 <= rng.string_label("x") < 2**63
