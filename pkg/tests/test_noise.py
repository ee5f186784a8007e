import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from skwave.noise import NoiseStream, block_normals, stream_normals, words_per_step


def test_words_per_step():
    assert [words_per_step(c) for c in (1, 4, 5, 96)] == [4, 4, 8, 96]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 50), st.integers(0, 30), st.integers(1, 13))
def test_random_access_matches_prefix(seed, sid, start, count):
    full = stream_normals(seed, sid, 0, start + 5, count)
    part = stream_normals(seed, sid, start, 5, count)
    np.testing.assert_array_equal(full[start:], part)


def test_stream_is_gaussian_and_independent():
    a = stream_normals(7, 0, 0, 4000, 12).ravel()
    b = stream_normals(7, 1, 0, 4000, 12).ravel()
    assert abs(a.mean()) < 0.02 and abs(a.var() - 1) < 0.03
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.02
    assert abs(np.corrcoef(a[:-1], a[1:])[0, 1]) < 0.02


def test_seed_changes_stream():
    assert not np.array_equal(stream_normals(1, 0, 0, 3, 4), stream_normals(2, 0, 0, 3, 4))


def test_noise_stream_helpers():
    s = NoiseStream(3, 2)
    np.testing.assert_array_equal(s.normals(5, 6), stream_normals(3, 2, 5, 1, 6)[0])
    np.testing.assert_allclose(s.increments(5, 6, 0.01), 0.1 * s.normals(5, 6))
    blk = block_normals(3, [0, 2], 4, 2, 6)
    np.testing.assert_array_equal(blk[1], stream_normals(3, 2, 4, 2, 6))
