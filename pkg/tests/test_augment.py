from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rareboost_forge.augment import jitter, random_dropout, scan_seed
from rareboost_forge.sensor import Scan


def _scan(rng, n):
    pts = rng.normal(scale=20, size=(n, 3)).astype(np.float32)
    return Scan(pts, rng.integers(0, 30, n), rng.integers(0, 50, n))


def _rows(scan):
    return Counter(zip(map(tuple, scan.points.tolist()), scan.semantic_labels.tolist(), scan.instance_ids.tolist()))


def test_dropout_keep_all_is_identity(rng):
    s = _scan(rng, 100)
    assert random_dropout(s, 1.0, seed=3).equals(s)


def test_jitter_zero_sigma_is_identity(rng):
    s = _scan(rng, 100)
    assert jitter(s, sigma=0.0).equals(s)


def test_dropout_exact_count(rng):
    s = _scan(rng, 1000)
    assert len(random_dropout(s, 0.8, seed=1)) == 800
    assert len(random_dropout(s, 0.0005, seed=1)) == 0  # round(0.5) is 0
    assert len(random_dropout(_scan(rng, 7), 0.5, seed=1)) == 4  # round(3.5) is 4


def test_dropout_keeps_order_and_labels(rng):
    s = _scan(rng, 500)
    out = random_dropout(s, 0.6, seed=2)
    # every surviving point appears in the input at increasing positions
    pos = [int(np.flatnonzero((s.points == p).all(axis=1))[0]) for p in out.points]
    assert pos == sorted(pos)
    assert np.array_equal(s.semantic_labels[pos], out.semantic_labels)
    assert np.array_equal(s.instance_ids[pos], out.instance_ids)


def test_seeded_reproducibility(rng):
    s = _scan(rng, 300)
    assert random_dropout(s, 0.5, seed=9).equals(random_dropout(s, 0.5, seed=9))
    assert jitter(s, seed=9).equals(jitter(s, seed=9))
    assert not jitter(s, seed=9).equals(jitter(s, seed=10))


def test_scan_seed_streams_differ():
    a = scan_seed(0, 0, 1).random(4)
    b = scan_seed(0, 1, 0).random(4)
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, scan_seed(0, 0, 1).random(4))


def test_jitter_mean_displacement():
    """Mean per-coordinate |noise| of N(0, s^2) is s * sqrt(2/pi); clipping at 5 s barely moves it."""
    n = 200_000
    s = Scan(np.zeros((n, 3), np.float32), np.zeros(n), np.zeros(n))
    sigma = 0.01
    d = np.abs(jitter(s, sigma=sigma, clip=0.05, seed=4).points.astype(np.float64))
    expected = sigma * np.sqrt(2 / np.pi)
    # standard error of the mean of |X| is sigma * sqrt(1 - 2/pi) / sqrt(3n)
    se = sigma * np.sqrt(1 - 2 / np.pi) / np.sqrt(3 * n)
    assert abs(d.mean() - expected) < 5 * se


def test_jitter_clip_is_active():
    n = 10_000
    s = Scan(np.zeros((n, 3), np.float32), np.zeros(n), np.zeros(n))
    d = jitter(s, sigma=1.0, clip=0.05, seed=0).points
    assert np.abs(d).max() <= np.float32(0.05)
    assert (np.abs(d) == np.float32(0.05)).mean() > 0.9


@pytest.mark.parametrize("kw", [{"keep_fraction": 0.0}, {"keep_fraction": 1.2}])
def test_dropout_validation(kw, rng):
    with pytest.raises(ValueError):
        random_dropout(_scan(rng, 5), **kw)


@pytest.mark.parametrize("kw", [{"sigma": -1.0}, {"clip": 0.0}])
def test_jitter_validation(kw, rng):
    with pytest.raises(ValueError):
        jitter(_scan(rng, 5), **kw)


@settings(max_examples=80)
@given(n=st.integers(0, 400), keep=st.floats(0.01, 1.0), seed=st.integers(0, 2**32 - 1))
def test_dropout_property(n, keep, seed):
    s = _scan(np.random.default_rng(seed), n)
    out = random_dropout(s, keep, seed=seed)
    assert len(out) == int(round(keep * n))
    assert not (_rows(out) - _rows(s))  # multiset containment


@settings(max_examples=80)
@given(n=st.integers(0, 400), sigma=st.floats(0.0, 0.5), clip=st.floats(1e-3, 0.2), seed=st.integers(0, 2**32 - 1))
def test_jitter_property(n, sigma, clip, seed):
    s = _scan(np.random.default_rng(seed), n)
    out = jitter(s, sigma=sigma, clip=clip, seed=seed)
    assert len(out) == n
    assert np.array_equal(out.semantic_labels, s.semantic_labels)
    assert np.array_equal(out.instance_ids, s.instance_ids)
    # one float32 rounding of the sum on top of the clip bound
    slack = np.spacing(np.abs(s.points).astype(np.float32) + np.float32(clip)).astype(np.float64)
    disp = np.abs(out.points.astype(np.float64) - s.points.astype(np.float64))
    assert np.all(disp <= clip + slack)
