"""Pure-numpy kernels.

Every function here has a twin of the same name and signature in
``_numba.py``; both must agree bit-for-bit. SipHash state is passed as a
length-4 uint64 array holding (v0, v1, v2, v3) after the fixed message
prefix has been absorbed; ``rem``/``k`` are the leftover prefix bytes (as a
little-endian integer) and their count, and ``total_len`` is the full
message length in bytes.
"""

import numpy as np

_U = np.uint64
_MASK8 = 0xFF


def _rotl(x, b):
    return (x << _U(b)) | (x >> _U(64 - b))


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


def _compress(v0, v1, v2, v3, block):
    v3 = v3 ^ block
    v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
    v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
    v0 = v0 ^ block
    return v0, v1, v2, v3


def siphash_batch(state, rem, k, total_len, elems, want_hi):
    """SipHash-2-4-128 of ``prefix || le64(e)`` for every e in ``elems``.

    Returns ``(lo, hi)``; ``hi`` is None unless ``want_hi``.
    """
    elems = np.asarray(elems, dtype=np.uint64)
    with np.errstate(over="ignore"):
        n = elems.shape[0]
        v0 = np.full(n, state[0], dtype=np.uint64)
        v1 = np.full(n, state[1], dtype=np.uint64)
        v2 = np.full(n, state[2], dtype=np.uint64)
        v3 = np.full(n, state[3], dtype=np.uint64)
        if k == 0:
            first = elems
            tail = np.zeros(n, dtype=np.uint64)
        else:
            first = _U(rem) | (elems << _U(8 * k))
            tail = elems >> _U(64 - 8 * k)
        v0, v1, v2, v3 = _compress(v0, v1, v2, v3, first)
        last = tail | _U((total_len & _MASK8) << 56)
        v0, v1, v2, v3 = _compress(v0, v1, v2, v3, last)
        v2 ^= _U(0xEE)
        for _ in range(4):
            v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
        lo = v0 ^ v1 ^ v2 ^ v3
        hi = None
        if want_hi:
            v1 ^= _U(0xDD)
            for _ in range(4):
                v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
            hi = v0 ^ v1 ^ v2 ^ v3
    return lo, hi


def trailing_rank(v, width):
    """Trailing-zero count of each ``width``-bit value; zero maps to ``width``."""
    v = np.asarray(v, dtype=np.uint64)
    out = np.full(v.shape, width, dtype=np.int64)
    nz = v != 0
    x = v[nz]
    lowbit = x & (~x + _U(1))
    out[nz] = np.frexp(lowbit.astype(np.float64))[1] - 1
    return out


def split_rank(lo, hi, r, w):
    """Bucket index (low r bits) and rank of the next w-1 bits of the hash."""
    width = w - 1
    idx = (lo & _U((1 << r) - 1)).astype(np.int64)
    if r == 0:
        upper = lo.copy()
    else:
        upper = lo >> _U(r)
        if hi is not None:
            upper |= hi << _U(64 - r)
    if width < 64:
        upper &= _U((1 << width) - 1)
    return idx, trailing_rank(upper, width)


def low_rank(lo, width):
    if width < 64:
        lo = lo & _U((1 << width) - 1)
    return trailing_rank(lo, width)


def fms_update(bits, state, rem, k, total_len, elems, r, w):
    lo, hi = siphash_batch(state, rem, k, total_len, elems, r + w - 1 > 64)
    idx, rank = split_rank(lo, hi, r, w)
    bits[idx, rank] = 1


def hll_update(regs, state, rem, k, total_len, elems, r, w):
    lo, hi = siphash_batch(state, rem, k, total_len, elems, r + w - 1 > 64)
    idx, rank = split_rank(lo, hi, r, w)
    np.maximum.at(regs, idx, (rank + 1).astype(regs.dtype))


def fm_update_row(row, state, rem, k, total_len, elems, w):
    lo, _ = siphash_batch(state, rem, k, total_len, elems, False)
    row[np.unique(low_rank(lo, w - 1))] = 1
