import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pocontrol import rng

KNOWN_ANSWERS = [
    ([0, 0, 0, 0], [0, 0], [0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8]),
    ([0xFFFFFFFF] * 4, [0xFFFFFFFF] * 2, [0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD]),
    ([0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344], [0xA4093822, 0x299F31D0],
     [0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1]),
]


@pytest.mark.parametrize("ctr,key,expected", KNOWN_ANSWERS)
def test_philox_known_answers(ctr, key, expected):
    out = rng.philox4x32([ctr], key)
    assert out[0].tolist() == expected


def test_split_seed_roundtrip_and_range():
    lo, hi = rng.split_seed(2**64 - 1)
    assert (lo, hi) == (0xFFFFFFFF, 0xFFFFFFFF)
    assert rng.split_seed(5) == (5, 0)
    with pytest.raises(ValueError):
        rng.split_seed(-1)
    with pytest.raises(ValueError):
        rng.split_seed(2**64)


def test_normals_are_reproducible_and_keyed():
    a = rng.normals(7, rng.TAG_V, [0, 1], [0, 1, 2], 0, 9)
    b = rng.normals(7, rng.TAG_V, [0, 1], [0, 1, 2], 0, 9)
    assert a.shape == (2, 3, 9)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, rng.normals(8, rng.TAG_V, [0, 1], [0, 1, 2], 0, 9))
    assert not np.array_equal(a, rng.normals(7, rng.TAG_W, [0, 1], [0, 1, 2], 0, 9))
    assert not np.array_equal(a[0], a[1])
    assert not np.array_equal(a[:, 0], a[:, 1])


@settings(max_examples=30, deadline=None)
@given(start=st.integers(0, 50), count=st.integers(1, 30), cut=st.integers(0, 30))
def test_stream_windows_are_consistent(start, count, cut):
    """Any window of a stream equals the matching slice of a longer draw."""
    cut = min(cut, count)
    full = rng.normals(3, rng.TAG_V, [4], [11], 0, start + count)[0, 0]
    win = rng.normals(3, rng.TAG_V, [4], [11], start, count)[0, 0]
    assert np.array_equal(full[start:], win)
    left = rng.normals(3, rng.TAG_V, [4], [11], start, cut)[0, 0]
    right = rng.normals(3, rng.TAG_V, [4], [11], start + cut, count - cut)[0, 0]
    assert np.array_equal(np.concatenate([left, right]), win)


def test_normal_moments():
    z = rng.normals(123, rng.TAG_W, [0], [0], 0, 10**6)[0, 0]
    assert abs(z.mean()) < 4e-3
    assert abs(z.var() - 1.0) < 0.01
    assert abs(np.mean(z**3)) < 0.02
    assert abs(np.mean(z**4) - 3.0) < 0.05


def test_uniforms_in_open_unit_interval():
    u = rng.uniforms(9, rng.TAG_JUMP, [0, 1], [0], 0, 10**5)
    assert u.shape == (2, 1, 10**5)
    assert u.min() > 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 4 * np.sqrt(1 / 12 / 2e5)


def test_derive_seed_separates_salts():
    s = {rng.derive_seed(1, salt) for salt in range(100)}
    assert len(s) == 100
    assert rng.derive_seed(1, 2, 3) == rng.derive_seed(1, 2, 3)
    assert all(0 <= x < 2**64 for x in s)
