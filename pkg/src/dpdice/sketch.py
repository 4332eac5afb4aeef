"""FM, HLL/LogLog and FMS cardinality sketches with their estimators.

All three structures are mergeable and keyed: sketches built under the same
:class:`~dpdice.hashing.HashKey` can be combined into the sketch of the
union. Integer elements (and uint64 numpy batches) are hashed as 8-byte
little-endian strings, so ``sk.insert(5)`` and ``sk.update(np.array([5]))``
touch the same bit.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigurationError
from .hashing import HashKey, PrefixState, keyed_hash

N_MAX = 2.0 ** 62
FM_PHI = 0.77351
LOGLOG_ALPHA = 0.783
_HEADER = struct.Struct("<4sII")


class Method(str, enum.Enum):
    FM = "FM"
    HLL = "HLL"
    LOGLOG = "LOGLOG"
    FMS = "FMS"


@dataclass(frozen=True)
class Estimate:
    n_hat: float
    method: Method

    def __float__(self):
        return float(self.n_hat)


def rho(bits, width: int | None = None) -> int:
    """Number of trailing zeros of a fixed-width bit string.

    ``bits`` is either a string of '0'/'1' (most significant bit first) or an
    integer together with its ``width``. An all-zero input returns the width.
    """
    if isinstance(bits, str):
        width = len(bits)
        value = int(bits, 2) if bits else 0
    else:
        if width is None:
            raise TypeError("width is required for integer input")
        value = int(bits) & ((1 << width) - 1)
    if width < 1:
        raise ConfigurationError("rho needs width >= 1")
    if value == 0:
        return width
    return (value & -value).bit_length() - 1


def default_w(n_expected: float, m: int = 1, kind: str = "fms") -> int:
    """Bits per array: ceil(log2(n/m) + 6) for FMS/HLL, ceil(log2 n + 6) for FM."""
    scale = n_expected if kind.lower() == "fm" else n_expected / m
    if scale <= 1:
        return 4
    return int(min(64, max(4, math.ceil(math.log2(scale) + 6))))


def _log2_exact(m: int) -> int:
    if m < 1 or m & (m - 1):
        raise ConfigurationError(f"m must be a power of two, got {m}")
    return m.bit_length() - 1


def _check_w(w: int):
    if not 2 <= w <= 64:
        raise ConfigurationError(f"w must be in [2, 64], got {w}")


def _coerce_key(key) -> HashKey | None:
    if key is None or isinstance(key, HashKey):
        return key
    return HashKey(bytes(key))


def _as_u64_batch(elems):
    if isinstance(elems, np.ndarray) and elems.dtype.kind in "iu":
        return elems.astype(np.uint64, copy=False)
    return None


class _BitMatrixSketch:
    MAGIC = b"????"

    def __init__(self, m: int, w: int, key=None, bits=None):
        self.r = _log2_exact(m)
        _check_w(w)
        self.m = m
        self.w = w
        self.key = _coerce_key(key)
        if bits is None:
            self.bits = np.zeros((m, w), dtype=np.uint8)
        else:
            bits = np.asarray(bits, dtype=np.uint8)
            if bits.shape != (m, w):
                raise ConfigurationError(f"bit matrix shape {bits.shape} != {(m, w)}")
            if bits.max(initial=0) > 1:
                raise ConfigurationError("bit matrix entries must be 0 or 1")
            self.bits = bits.copy()

    def _need_key(self) -> HashKey:
        if self.key is None:
            raise ConfigurationError("sketch has no hash key; cannot insert")
        return self.key

    def _check_compatible(self, other):
        if type(other) is not type(self):
            raise ConfigurationError("cannot merge sketches of different kinds")
        if (self.m, self.w) != (other.m, other.w):
            raise ConfigurationError(
                f"dimension mismatch: ({self.m}, {self.w}) vs ({other.m}, {other.w})")
        if self.key is not None and other.key is not None and self.key != other.key:
            raise ConfigurationError("sketches were built under different hash keys")

    def merge(self, other):
        """Bitwise OR: the sketch of the union of both input sets."""
        self._check_compatible(other)
        return type(self)(self.m, self.w, self.key or other.key, self.bits | other.bits)

    def bit_count(self) -> int:
        return int(self.bits.sum())

    def copy(self):
        return type(self)(self.m, self.w, self.key, self.bits)

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return (self.m, self.w) == (other.m, other.w) and np.array_equal(self.bits, other.bits)

    def __repr__(self):
        return f"{type(self).__name__}(m={self.m}, w={self.w}, set_bits={self.bit_count()})"

    def to_bytes(self) -> bytes:
        packed = np.packbits(self.bits.ravel(), bitorder="little")
        return _HEADER.pack(self.MAGIC, self.m, self.w) + packed.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, key=None):
        magic, m, w = _HEADER.unpack_from(data)
        if magic != cls.MAGIC:
            raise ConfigurationError(f"bad magic {magic!r}, expected {cls.MAGIC!r}")
        nbytes = (m * w + 7) // 8
        if len(data) != _HEADER.size + nbytes:
            raise ConfigurationError("truncated or oversized sketch payload")
        body = np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=_HEADER.size)
        bits = np.unpackbits(body, bitorder="little")[: m * w].reshape(m, w)
        return cls(m, w, key, bits)


class FmsSketch(_BitMatrixSketch):
    """m = 2^r bit arrays of w bits; each element sets exactly one bit.

    The low r hash bits pick the array and the trailing-zero rank of the next
    w - 1 bits picks the position, so an insert costs one hash.
    """

    MAGIC = b"FMS1"

    def _locate(self, e):
        h = keyed_hash(self._need_key(), e, self.r + self.w - 1)
        return h & (self.m - 1), rho(h >> self.r, self.w - 1)

    def insert(self, e) -> "FmsSketch":
        i, j = self._locate(e)
        self.bits[i, j] = 1
        return self

    def update(self, elems) -> "FmsSketch":
        batch = _as_u64_batch(elems)
        if batch is None:
            for e in elems:
                self.insert(e)
            return self
        ps = PrefixState.for_prefix(self._need_key())
        kernels.fms_update(self.bits, ps.state, ps.rem, ps.k, ps.total_len,
                           batch, self.r, self.w)
        return self

    def zero_count(self) -> int:
        return self.m * self.w - self.bit_count()

    def estimate(self) -> Estimate:
        return fms_estimate(self.zero_count(), self.m, self.w)


class FmSketch(_BitMatrixSketch):
    """Classic FM: m independent hash functions, every array touched per insert.

    Row i (1-based) hashes ``key || be32(i) || e``.
    """

    MAGIC = b"FM01"

    def insert(self, e) -> "FmSketch":
        key = self._need_key()
        width = self.w - 1
        for i in range(self.m):
            h = keyed_hash(key, e, width, prefix=(i + 1).to_bytes(4, "big"))
            self.bits[i, rho(h, width)] = 1
        return self

    def update(self, elems) -> "FmSketch":
        batch = _as_u64_batch(elems)
        if batch is None:
            for e in elems:
                self.insert(e)
            return self
        key = self._need_key()
        for i in range(self.m):
            ps = PrefixState.for_prefix(key, (i + 1).to_bytes(4, "big"))
            kernels.fm_update_row(self.bits[i], ps.state, ps.rem, ps.k,
                                  ps.total_len, batch, self.w)
        return self

    def first_zeros(self) -> np.ndarray:
        """Per-row index of the least zero bit; a saturated row gives w."""
        zero = self.bits == 0
        return np.where(zero.any(axis=1), zero.argmax(axis=1), self.w)

    def zstar(self) -> int:
        return int(self.first_zeros().sum())

    def estimate(self) -> Estimate:
        return fm_estimate(self.zstar(), self.m)

    @classmethod
    def from_model(cls, n: int, m: int, w: int, rng) -> "FmSketch":
        """Draw an FM sketch of n distinct elements under the ideal-hash model.

        Each row receives n independent ranks; the count landing on each
        position is multinomial, so this matches the distribution of a keyed
        build without computing m * n hashes.
        """
        probs = np.exp2(-np.arange(1, w, dtype=np.float64))
        probs = np.append(probs, 2.0 ** -(w - 1))
        counts = rng.multinomial(int(n), probs, size=m)
        return cls(m, w, None, (counts > 0).astype(np.uint8))


class HllSketch:
    """m = 2^r registers; register i keeps 1 + the largest rank seen (0 = empty).

    Ranks are trailing-zero counts of w - 1 hash bits, so registers lie in
    [0, w]. ``zsharp`` reports the 0-based mean register used by LogLog.
    """

    MAGIC = b"HLL1"

    def __init__(self, m: int, w: int, key=None, registers=None):
        self.r = _log2_exact(m)
        _check_w(w)
        self.m = m
        self.w = w
        self.key = _coerce_key(key)
        if registers is None:
            self.registers = np.zeros(m, dtype=np.uint8)
        else:
            registers = np.asarray(registers, dtype=np.uint8)
            if registers.shape != (m,):
                raise ConfigurationError(f"register array shape {registers.shape} != ({m},)")
            if registers.max(initial=0) > w:
                raise ConfigurationError(f"register value exceeds w={w}")
            self.registers = registers.copy()

    def insert(self, e) -> "HllSketch":
        if self.key is None:
            raise ConfigurationError("sketch has no hash key; cannot insert")
        h = keyed_hash(self.key, e, self.r + self.w - 1)
        i = h & (self.m - 1)
        val = rho(h >> self.r, self.w - 1) + 1
        if val > self.registers[i]:
            self.registers[i] = val
        return self

    def update(self, elems) -> "HllSketch":
        batch = _as_u64_batch(elems)
        if batch is None:
            for e in elems:
                self.insert(e)
            return self
        if self.key is None:
            raise ConfigurationError("sketch has no hash key; cannot insert")
        ps = PrefixState.for_prefix(self.key)
        kernels.hll_update(self.registers, ps.state, ps.rem, ps.k, ps.total_len,
                           batch, self.r, self.w)
        return self

    def merge(self, other: "HllSketch") -> "HllSketch":
        if not isinstance(other, HllSketch):
            raise ConfigurationError("cannot merge sketches of different kinds")
        if (self.m, self.w) != (other.m, other.w):
            raise ConfigurationError(
                f"dimension mismatch: ({self.m}, {self.w}) vs ({other.m}, {other.w})")
        if self.key is not None and other.key is not None and self.key != other.key:
            raise ConfigurationError("sketches were built under different hash keys")
        return HllSketch(self.m, self.w, self.key or other.key,
                         np.maximum(self.registers, other.registers))

    def zsharp(self) -> float:
        ranks = np.maximum(self.registers.astype(np.int64) - 1, 0)
        return float(ranks.mean())

    def raw_estimate(self) -> float:
        inv = np.exp2(-self.registers.astype(np.float64)).sum()
        return alpha_m(self.m) * self.m * self.m / inv

    def estimate(self) -> Estimate:
        return hll_estimate(self)

    def loglog_estimate(self) -> Estimate:
        return loglog_estimate(self)

    def copy(self) -> "HllSketch":
        return HllSketch(self.m, self.w, self.key, self.registers)

    def __eq__(self, other):
        if not isinstance(other, HllSketch):
            return NotImplemented
        return (self.m, self.w) == (other.m, other.w) and np.array_equal(
            self.registers, other.registers)

    def __repr__(self):
        return f"HllSketch(m={self.m}, w={self.w}, nonzero={int((self.registers > 0).sum())})"

    def to_bytes(self) -> bytes:
        return _HEADER.pack(self.MAGIC, self.m, self.w) + self.registers.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, key=None) -> "HllSketch":
        magic, m, w = _HEADER.unpack_from(data)
        if magic != cls.MAGIC:
            raise ConfigurationError(f"bad magic {magic!r}, expected {cls.MAGIC!r}")
        if len(data) != _HEADER.size + m:
            raise ConfigurationError("truncated or oversized sketch payload")
        return cls(m, w, key, np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size))


def load_sketch(data: bytes, key=None):
    """Deserialize any sketch kind by its magic."""
    for cls in (FmsSketch, FmSketch, HllSketch):
        if data[:4] == cls.MAGIC:
            return cls.from_bytes(data, key)
    raise ConfigurationError(f"unknown sketch magic {data[:4]!r}")


def _fms_probs(m: int, w: int) -> np.ndarray:
    p = np.exp2(-np.arange(1, w + 1, dtype=np.float64)) / m
    p[w - 1] = 2.0 ** (-(w - 1)) / m
    return p


def f_eval(n: float, m: int, w: int) -> float:
    """Expected fraction of zero bits in an FMS sketch after n distinct inserts."""
    if n < 0:
        raise ConfigurationError("n must be nonnegative")
    p = _fms_probs(m, w)
    return float(np.exp(n * np.log1p(-p)).mean())


def fms_estimate(z_observed: float, m: int, w: int) -> Estimate:
    """Invert f by bisection; noisy Z outside [0, m*w] is clamped first."""
    v = z_observed / (m * w)
    if v >= 1.0:
        return Estimate(0.0, Method.FMS)
    floor = f_eval(N_MAX, m, w)
    if v <= floor:
        return Estimate(N_MAX, Method.FMS)
    lo, hi = 0.0, N_MAX
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f_eval(mid, m, w) > v:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    return Estimate(0.5 * (lo + hi), Method.FMS)


def fm_estimate(zstar: float, m: int) -> Estimate:
    return Estimate(2.0 ** (zstar / m) / FM_PHI, Method.FM)


def alpha_m(m: int) -> float:
    fixed = {16: 0.673, 32: 0.697, 64: 0.709}
    return fixed.get(m, 0.7213 / (1.0 + 1.079 / m))


def hll_estimate(sk: HllSketch) -> Estimate:
    """Raw HLL estimate with linear counting below 2.5 m when a register is empty."""
    raw = sk.raw_estimate()
    empty = int((sk.registers == 0).sum())
    if raw < 2.5 * sk.m and empty > 0:
        return Estimate(-sk.m * math.log(empty / sk.m), Method.HLL)
    return Estimate(raw, Method.HLL)


def loglog_from_zsharp(zsharp: float, m: int) -> Estimate:
    return Estimate(LOGLOG_ALPHA * m * 2.0 ** zsharp, Method.LOGLOG)


def loglog_estimate(sk: HllSketch) -> Estimate:
    return loglog_from_zsharp(sk.zsharp(), sk.m)
