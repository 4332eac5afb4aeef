"""Keyed hashing shared by all sketches.

The hash of an element ``e`` under key ``k`` is SipHash-2-4 with 128-bit
output, keyed by the first 16 key bytes, over the message ``k || e``. The
digest is read as a little-endian 128-bit integer and its low ``nbits``
bits are used. Integer elements are encoded as 8-byte little-endian.
"""

from __future__ import annotations

import secrets
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigurationError

_M64 = (1 << 64) - 1
_BLOCK = struct.Struct("<Q")


@dataclass(frozen=True)
class HashKey:
    key_bytes: bytes

    def __post_init__(self):
        if not isinstance(self.key_bytes, (bytes, bytearray)):
            raise ConfigurationError("hash key must be bytes")
        if len(self.key_bytes) < 16:
            raise ConfigurationError(
                f"hash key needs at least 16 bytes, got {len(self.key_bytes)}")
        object.__setattr__(self, "key_bytes", bytes(self.key_bytes))

    @classmethod
    def random(cls, rng=None, nbytes: int = 16) -> "HashKey":
        """Fresh key from a numpy Generator, or from the OS CSPRNG if rng is None."""
        if rng is None:
            return cls(secrets.token_bytes(nbytes))
        return cls(rng.bytes(nbytes))

    @classmethod
    def from_hex(cls, text: str) -> "HashKey":
        return cls(bytes.fromhex(text))

    def hex(self) -> str:
        return self.key_bytes.hex()


def _rotl(x, b):
    return ((x << b) | (x >> (64 - b))) & _M64


def _sipround(v0, v1, v2, v3):
    v0 = (v0 + v1) & _M64
    v1 = _rotl(v1, 13) ^ v0
    v0 = _rotl(v0, 32)
    v2 = (v2 + v3) & _M64
    v3 = _rotl(v3, 16) ^ v2
    v0 = (v0 + v3) & _M64
    v3 = _rotl(v3, 21) ^ v0
    v2 = (v2 + v1) & _M64
    v1 = _rotl(v1, 17) ^ v2
    v2 = _rotl(v2, 32)
    return v0, v1, v2, v3


def _init_state(key16: bytes, wide: bool):
    k0, k1 = struct.unpack("<QQ", key16[:16])
    v0 = k0 ^ 0x736F6D6570736575
    v1 = k1 ^ 0x646F72616E646F6D
    v2 = k0 ^ 0x6C7967656E657261
    v3 = k1 ^ 0x7465646279746573
    if wide:
        v1 ^= 0xEE
    return v0, v1, v2, v3


def _absorb(state, block):
    v0, v1, v2, v3 = state
    v3 ^= block
    v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
    v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
    return v0 ^ block, v1, v2, v3


def siphash(key16: bytes, message: bytes, wide: bool = True) -> int:
    """Reference SipHash-2-4; 128-bit output if ``wide`` else the 64-bit variant."""
    state = _init_state(key16, wide)
    full = len(message) // 8 * 8
    for off in range(0, full, 8):
        state = _absorb(state, _BLOCK.unpack_from(message, off)[0])
    tail = int.from_bytes(message[full:], "little")
    state = _absorb(state, tail | ((len(message) & 0xFF) << 56))
    v0, v1, v2, v3 = state
    v2 ^= 0xEE if wide else 0xFF
    for _ in range(4):
        v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
    lo = v0 ^ v1 ^ v2 ^ v3
    if not wide:
        return lo
    v1 ^= 0xDD
    for _ in range(4):
        v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
    return lo | ((v0 ^ v1 ^ v2 ^ v3) << 64)


def encode_element(e) -> bytes:
    if isinstance(e, (bytes, bytearray, memoryview)):
        return bytes(e)
    if isinstance(e, (int, np.integer)):
        return int(e).to_bytes(8, "little", signed=int(e) < 0)
    if isinstance(e, str):
        return e.encode("utf-8")
    raise TypeError(f"cannot hash element of type {type(e).__name__}")


def keyed_hash(key: HashKey, element, nbits: int, prefix: bytes = b"") -> int:
    """Low ``nbits`` bits of H(key || prefix || element)."""
    if not 1 <= nbits <= 128:
        raise ConfigurationError("nbits must be in [1, 128]")
    msg = key.key_bytes + prefix + encode_element(element)
    return siphash(key.key_bytes, msg) & ((1 << nbits) - 1)


@dataclass(frozen=True)
class PrefixState:
    """SipHash state after absorbing every full 8-byte block of a fixed prefix.

    Batch kernels finish the hash for ``prefix || le64(e)`` from here.
    """

    state: np.ndarray
    rem: int
    k: int
    total_len: int

    @classmethod
    def for_prefix(cls, key: HashKey, extra: bytes = b"") -> "PrefixState":
        prefix = key.key_bytes + extra
        state = _init_state(key.key_bytes, True)
        full = len(prefix) // 8 * 8
        for off in range(0, full, 8):
            state = _absorb(state, _BLOCK.unpack_from(prefix, off)[0])
        return cls(np.array(state, dtype=np.uint64),
                   int.from_bytes(prefix[full:], "little"),
                   len(prefix) - full, len(prefix) + 8)


def hash_u64(key: HashKey, elems, want_hi: bool = False, extra: bytes = b""):
    """Vectorized digests of 8-byte integer elements: ``(lo64, hi64 or None)``."""
    ps = PrefixState.for_prefix(key, extra)
    return kernels.siphash_batch(ps.state, ps.rem, ps.k, ps.total_len,
                                 np.asarray(elems, dtype=np.uint64), want_hi)
