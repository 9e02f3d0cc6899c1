"""The atomic primitives must survive genuinely racing threads."""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numba import njit

from pointraster.atomics import (
    add_u64,
    cas_u32,
    f32_bits,
    f32_from_bits,
    min_u64,
    xchg_u64,
)

from helpers import f32_bits_oracle


@njit(nogil=True)
def _hammer_min(fb, idxs, vals, lo, hi):
    for i in range(lo, hi):
        min_u64(fb, idxs[i], vals[i])


@njit(nogil=True)
def _hammer_add(acc, n):
    for _ in range(n):
        add_u64(acc, 0, np.uint64(1))


@njit(nogil=True)
def _locked_increment(lock, shared, n):
    for _ in range(n):
        while cas_u32(lock, 0, np.uint32(0), np.uint32(1)) != np.uint32(0):
            pass
        shared[0] += 1
        lock[0] = np.uint32(0)


@njit
def _bits_roundtrip(x):
    return f32_bits(x), f32_from_bits(f32_bits(x))


def test_racing_atomic_min_matches_sequential_fold():
    rng = np.random.default_rng(11)
    n = 100_000
    vals = rng.integers(1, 1 << 56, n, dtype=np.uint64)
    idxs = rng.integers(0, 97, n, dtype=np.int64)
    fb = np.full(97, np.uint64(2**64 - 1), dtype=np.uint64)
    expected = fb.copy()
    np.minimum.at(expected, idxs, vals)

    with ThreadPoolExecutor(8) as pool:
        step = n // 8
        futures = [pool.submit(_hammer_min, fb, idxs, vals, k * step,
                               n if k == 7 else (k + 1) * step)
                   for k in range(8)]
        for f in futures:
            f.result()
    assert np.array_equal(fb, expected)


def test_racing_atomic_add_loses_nothing():
    acc = np.zeros(1, dtype=np.uint64)
    with ThreadPoolExecutor(8) as pool:
        futures = [pool.submit(_hammer_add, acc, 50_000) for _ in range(8)]
        for f in futures:
            f.result()
    assert acc[0] == 8 * 50_000


def test_cas_lock_serializes_plain_increments():
    lock = np.zeros(1, dtype=np.uint32)
    shared = np.zeros(1, dtype=np.uint64)
    with ThreadPoolExecutor(6) as pool:
        futures = [pool.submit(_locked_increment, lock, shared, 20_000)
                   for _ in range(6)]
        for f in futures:
            f.result()
    assert shared[0] == 6 * 20_000


def test_exchange_returns_previous_value():
    arr = np.array([7], dtype=np.uint64)
    assert xchg_u64(arr, 0, np.uint64(99)) == 7
    assert arr[0] == 99


def test_f32_bits_matches_struct():
    rng = np.random.default_rng(5)
    for x in [1.0, 2.0, 0.1, 1e-40, 3.0e38] + list(rng.uniform(1e-6, 1e6, 50)):
        bits, back = _bits_roundtrip(float(x))
        assert bits == f32_bits_oracle(float(x))
        assert back == np.float64(np.float32(x))
