"""Numba-compiled kernels, twins of ``_numpy.py``."""

import numpy as np
from numba import njit

_U = np.uint64


@njit(inline="always")
def _rotl(x, b):
    return (x << _U(b)) | (x >> _U(64 - b))


@njit(inline="always")
def _sipround(v0, v1, v2, v3):
    v0 = v0 + v1
    v1 = _rotl(v1, 13)
    v1 ^= v0
    v0 = _rotl(v0, 32)
    v2 = v2 + v3
    v3 = _rotl(v3, 16)
    v3 ^= v2
    v0 = v0 + v3
    v3 = _rotl(v3, 21)
    v3 ^= v0
    v2 = v2 + v1
    v1 = _rotl(v1, 17)
    v1 ^= v2
    v2 = _rotl(v2, 32)
    return v0, v1, v2, v3


@njit(inline="always")
def _hash_one(s0, s1, s2, s3, rem, k, last_len, e, want_hi):
    v0, v1, v2, v3 = s0, s1, s2, s3
    if k == 0:
        first = e
        tail = _U(0)
    else:
        first = rem | (e << _U(8 * k))
        tail = e >> _U(64 - 8 * k)
    v3 ^= first
    v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
    v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
    v0 ^= first
    last = tail | last_len
    v3 ^= last
    v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
    v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
    v0 ^= last
    v2 ^= _U(0xEE)
    for _ in range(4):
        v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
    lo = v0 ^ v1 ^ v2 ^ v3
    hi = _U(0)
    if want_hi:
        v1 ^= _U(0xDD)
        for _ in range(4):
            v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
        hi = v0 ^ v1 ^ v2 ^ v3
    return lo, hi


@njit(inline="always")
def _rank(v, width):
    if v == 0:
        return width
    c = 0
    while (v & _U(1)) == 0:
        v >>= _U(1)
        c += 1
    return c


@njit(cache=True)
def _siphash_batch(state, rem, k, total_len, elems, want_hi):
    n = elems.shape[0]
    lo = np.empty(n, dtype=np.uint64)
    hi = np.empty(n if want_hi else 0, dtype=np.uint64)
    last_len = _U(total_len & 0xFF) << _U(56)
    for t in range(n):
        a, b = _hash_one(state[0], state[1], state[2], state[3], _U(rem), k,
                         last_len, elems[t], want_hi)
        lo[t] = a
        if want_hi:
            hi[t] = b
    return lo, hi


def siphash_batch(state, rem, k, total_len, elems, want_hi):
    elems = np.ascontiguousarray(elems, dtype=np.uint64)
    lo, hi = _siphash_batch(np.asarray(state, dtype=np.uint64), rem, k,
                            total_len, elems, bool(want_hi))
    return lo, (hi if want_hi else None)


@njit(cache=True)
def _trailing_rank(v, width):
    out = np.empty(v.shape[0], dtype=np.int64)
    for t in range(v.shape[0]):
        out[t] = _rank(v[t], width)
    return out


def trailing_rank(v, width):
    return _trailing_rank(np.ascontiguousarray(v, dtype=np.uint64), width)


@njit(inline="always")
def _split(lo, hi, r, w):
    idx = lo & ((_U(1) << _U(r)) - _U(1))
    if r == 0:
        upper = lo
    else:
        upper = (lo >> _U(r)) | (hi << _U(64 - r))
    width = w - 1
    if width < 64:
        upper &= (_U(1) << _U(width)) - _U(1)
    return np.int64(idx), _rank(upper, width)


@njit(cache=True)
def _fms_update(bits, state, rem, k, total_len, elems, r, w):
    want_hi = r + w - 1 > 64
    last_len = _U(total_len & 0xFF) << _U(56)
    for t in range(elems.shape[0]):
        lo, hi = _hash_one(state[0], state[1], state[2], state[3], _U(rem), k,
                           last_len, elems[t], want_hi)
        i, j = _split(lo, hi, r, w)
        bits[i, j] = 1


@njit(cache=True)
def _hll_update(regs, state, rem, k, total_len, elems, r, w):
    want_hi = r + w - 1 > 64
    last_len = _U(total_len & 0xFF) << _U(56)
    for t in range(elems.shape[0]):
        lo, hi = _hash_one(state[0], state[1], state[2], state[3], _U(rem), k,
                           last_len, elems[t], want_hi)
        i, j = _split(lo, hi, r, w)
        if regs[i] < j + 1:
            regs[i] = j + 1


@njit(cache=True)
def _fm_update_row(row, state, rem, k, total_len, elems, w):
    last_len = _U(total_len & 0xFF) << _U(56)
    width = w - 1
    mask = (_U(1) << _U(width)) - _U(1) if width < 64 else ~_U(0)
    for t in range(elems.shape[0]):
        lo, _ = _hash_one(state[0], state[1], state[2], state[3], _U(rem), k,
                          last_len, elems[t], False)
        row[_rank(lo & mask, width)] = 1


def fms_update(bits, state, rem, k, total_len, elems, r, w):
    _fms_update(bits, np.asarray(state, dtype=np.uint64), rem, k, total_len,
                np.ascontiguousarray(elems, dtype=np.uint64), r, w)


def hll_update(regs, state, rem, k, total_len, elems, r, w):
    _hll_update(regs, np.asarray(state, dtype=np.uint64), rem, k, total_len,
                np.ascontiguousarray(elems, dtype=np.uint64), r, w)


def fm_update_row(row, state, rem, k, total_len, elems, w):
    _fm_update_row(row, np.asarray(state, dtype=np.uint64), rem, k, total_len,
                   np.ascontiguousarray(elems, dtype=np.uint64), w)
