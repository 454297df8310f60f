import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chbell.streams import BLOCK, normals, stream_key, uniforms


def test_reproducible_and_seed_dependent():
    a = uniforms(1, "x", 0, 1000)
    assert np.array_equal(a, uniforms(1, "x", 0, 1000))
    assert not np.array_equal(a, uniforms(2, "x", 0, 1000))
    assert not np.array_equal(a, uniforms(1, "y", 0, 1000))
    assert ((a >= 0) & (a < 1)).all()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 3 * BLOCK), st.integers(0, 2 * BLOCK), st.integers(0, 2 * BLOCK))
def test_chunking_invariance(start, first, second):
    whole = uniforms(9, "s", start, first + second)
    parts = np.concatenate([uniforms(9, "s", start, first), uniforms(9, "s", start + first, second)])
    assert np.array_equal(whole, parts)


def test_key_is_128_bit():
    assert stream_key(0, "a").shape == (2,)
    assert not np.array_equal(stream_key(0, "a"), stream_key(0, "b"))


def test_uniformity():
    u = uniforms(3, "u", 0, 200000)
    counts = np.histogram(u, bins=20, range=(0, 1))[0]
    expected = len(u) / 20
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < 45  # 19 degrees of freedom, far beyond the 99.9th percentile


def test_normals_moments():
    z = normals(4, "n", 0, 200000)
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01
    assert np.isfinite(z).all()


def test_rejects_negative():
    with pytest.raises(ValueError):
        uniforms(0, "x", -1, 5)
    assert len(uniforms(0, "x", 5, 0)) == 0
