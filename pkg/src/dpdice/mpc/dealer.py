"""Simulated trusted dealer for the offline phase, and dealer-material files.

The dealer hands each computation party (CP) its share of correlated
randomness:

* ``rand``: shared uniform field elements, used to mask inputs;
* ``rand2``: the L shared bits a_0..a_{L-1} of a uniform a in [0, p);
* ``expchain``: shares of R^-1, R, ..., R^D for uniform nonzero R, optionally
  with the products R^-1 * a_t for the matching bit bundle;
* ``triples``: Beaver triples.

File layout, all little-endian: a sequence of records ``tag:u8 len:u32 body``.
The first record is MACKEY; share pairs are two 16-byte integers
(value, MAC).
"""

from __future__ import annotations

import random
import secrets
import struct
from collections import Counter
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import BinaryIO

from ..errors import ConfigurationError, MaterialExhausted
from .field import FieldParams
from .shares import AuthShare, ExpChain, Triple

TAG_RAND = 1
TAG_RAND2 = 2
TAG_EXPCHAIN = 3
TAG_TRIPLE = 4
TAG_MACKEY = 5

KINDS = ("rand", "rand2", "expchain", "triples")

_REC = struct.Struct("<BI")
_W = 16  # bytes per field element on disk and on the wire


@dataclass(frozen=True)
class MaterialCounts:
    rand: int = 0
    rand2: int = 0
    expchain: int = 0
    triples: int = 0
    chain_length: int = 0
    with_products: bool = True

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in KINDS}


@dataclass
class PartyMaterial:
    """Everything one CP received from the dealer, with a consumption ledger."""

    index: int
    n_parties: int
    field: FieldParams
    mac_key: int
    rand: list = dc_field(default_factory=list)
    rand2: list = dc_field(default_factory=list)
    expchain: list = dc_field(default_factory=list)
    triples: list = dc_field(default_factory=list)
    used: Counter = dc_field(default_factory=Counter)

    def remaining(self, kind: str) -> int:
        return len(getattr(self, kind)) - self.used[kind]

    def take(self, kind: str, count: int) -> list:
        """Next ``count`` unused items of ``kind``; each item is handed out once."""
        if kind not in KINDS:
            raise ConfigurationError(f"unknown material kind {kind!r}")
        items = getattr(self, kind)
        start = self.used[kind]
        if start + count > len(items):
            raise MaterialExhausted(
                f"{kind}: need {count}, only {len(items) - start} of {len(items)} left")
        self.used[kind] = start + count
        return items[start:start + count]

    def counts(self) -> dict:
        return {k: len(getattr(self, k)) for k in KINDS}


@dataclass
class DealerMaterial:
    parties: list
    counts: MaterialCounts

    @property
    def mac_key(self) -> int:
        """Global MAC key; only the dealer and tests ever see it."""
        return sum(pm.mac_key for pm in self.parties) % self.parties[0].field.p


class TrustedDealer:
    """Generates authenticated shares for ``n_parties`` CPs.

    ``seed`` makes dealing reproducible via ``random.Random``; without it the
    OS CSPRNG is used.
    """

    def __init__(self, field: FieldParams, n_parties: int, seed=None):
        if n_parties < 2:
            raise ConfigurationError("need at least two computation parties")
        self.field = field
        self.n = n_parties
        self.rng = random.Random(seed) if seed is not None else secrets.SystemRandom()
        p = field.p
        while True:
            keys = [self.rng.randrange(p) for _ in range(n_parties)]
            if sum(keys) % p:
                break
        self.mac_keys = keys
        self.delta = sum(keys) % p

    def share(self, x: int) -> list:
        """Authenticated sharing of x: value shares sum to x, MAC shares to x * delta."""
        p, n, rr = self.field.p, self.n, self.rng.randrange
        vs = [rr(p) for _ in range(n - 1)]
        ms = [rr(p) for _ in range(n - 1)]
        vs.append((x - sum(vs)) % p)
        ms.append((x * self.delta - sum(ms)) % p)
        return [AuthShare(v, m) for v, m in zip(vs, ms)]

    def _scatter(self, x: int, sinks: list) -> None:
        for sink, s in zip(sinks, self.share(x)):
            sink.append(s)

    def prepare(self, rand: int = 0, rand2: int = 0, chain_length: int = 0,
                triples: int = 0, with_products: bool = True) -> DealerMaterial:
        """Deal ``rand2`` bit bundles, each paired with an exp chain of length ``chain_length``."""
        f = self.field
        p, L = f.p, f.bits
        parties = [PartyMaterial(j, self.n, f, k) for j, k in enumerate(self.mac_keys)]
        for _ in range(rand):
            self._scatter(self.rng.randrange(p), [pm.rand for pm in parties])
        for _ in range(rand2):
            a = self.rng.randrange(p)
            bit_shares = [[] for _ in parties]
            for t in range(L):
                self._scatter((a >> t) & 1, bit_shares)
            for pm, bs in zip(parties, bit_shares):
                pm.rand2.append(tuple(bs))
            if chain_length:
                R = f.random_nonzero(self.rng)
                Rinv = pow(R, -1, p)
                inv = self.share(Rinv)
                powers = [[] for _ in parties]
                Rt = 1
                for _ in range(chain_length):
                    Rt = Rt * R % p
                    self._scatter(Rt, powers)
                prods = [[] for _ in parties]
                if with_products:
                    for t in range(L):
                        self._scatter(Rinv * ((a >> t) & 1) % p, prods)
                for j, pm in enumerate(parties):
                    pm.expchain.append(ExpChain(inv[j], tuple(powers[j]), tuple(prods[j])))
        for _ in range(triples):
            a, b = self.rng.randrange(p), self.rng.randrange(p)
            sa, sb, sc = self.share(a), self.share(b), self.share(a * b % p)
            for j, pm in enumerate(parties):
                pm.triples.append(Triple(sa[j], sb[j], sc[j]))
        counts = MaterialCounts(rand, rand2, rand2 if chain_length else 0, triples,
                                chain_length, with_products and bool(chain_length))
        return DealerMaterial(parties, counts)


# ---------------------------------------------------------------- file I/O

def _u(x: int) -> bytes:
    return x.to_bytes(_W, "little")


def _pairs(shares) -> bytes:
    return b"".join(_u(s.value) + _u(s.mac) for s in shares)


def _read_pairs(buf: bytes, off: int, count: int):
    out = []
    for _ in range(count):
        v = int.from_bytes(buf[off:off + _W], "little")
        m = int.from_bytes(buf[off + _W:off + 2 * _W], "little")
        out.append(AuthShare(v, m))
        off += 2 * _W
    return out, off


def _record(fh: BinaryIO, tag: int, body: bytes) -> None:
    fh.write(_REC.pack(tag, len(body)))
    fh.write(body)


def write_party_material(pm: PartyMaterial, path) -> None:
    """Write one CP's unused material to ``path``."""
    with open(path, "wb") as fh:
        head = struct.pack("<HHHH", pm.index, pm.n_parties, pm.field.lam, pm.field.tau)
        _record(fh, TAG_MACKEY, head + _u(pm.field.p) + _u(pm.mac_key))
        for s in pm.rand[pm.used["rand"]:]:
            _record(fh, TAG_RAND, _pairs([s]))
        for bundle in pm.rand2[pm.used["rand2"]:]:
            _record(fh, TAG_RAND2, struct.pack("<H", len(bundle)) + _pairs(bundle))
        for ch in pm.expchain[pm.used["expchain"]:]:
            body = struct.pack("<HH", len(ch.powers), len(ch.products))
            _record(fh, TAG_EXPCHAIN, body + _pairs((ch.inverse,) + ch.powers + ch.products))
        for t in pm.triples[pm.used["triples"]:]:
            _record(fh, TAG_TRIPLE, _pairs([t.a, t.b, t.c]))


def read_party_material(path) -> PartyMaterial:
    data = Path(path).read_bytes()
    off, pm = 0, None
    while off < len(data):
        if off + _REC.size > len(data):
            raise ConfigurationError(f"{path}: truncated record header")
        tag, n = _REC.unpack_from(data, off)
        off += _REC.size
        body = data[off:off + n]
        if len(body) != n:
            raise ConfigurationError(f"{path}: truncated record body")
        off += n
        if tag == TAG_MACKEY:
            idx, nparties, lam, tau = struct.unpack_from("<HHHH", body)
            p = int.from_bytes(body[8:8 + _W], "little")
            key = int.from_bytes(body[8 + _W:8 + 2 * _W], "little")
            pm = PartyMaterial(idx, nparties, FieldParams(p, lam, tau), key)
            continue
        if pm is None:
            raise ConfigurationError(f"{path}: material record before MACKEY")
        if tag == TAG_RAND:
            pm.rand.append(_read_pairs(body, 0, 1)[0][0])
        elif tag == TAG_RAND2:
            (nb,) = struct.unpack_from("<H", body)
            pm.rand2.append(tuple(_read_pairs(body, 2, nb)[0]))
        elif tag == TAG_EXPCHAIN:
            npow, nprod = struct.unpack_from("<HH", body)
            items, _ = _read_pairs(body, 4, 1 + npow + nprod)
            pm.expchain.append(ExpChain(items[0], tuple(items[1:1 + npow]),
                                        tuple(items[1 + npow:])))
        elif tag == TAG_TRIPLE:
            a, b, c = _read_pairs(body, 0, 3)[0]
            pm.triples.append(Triple(a, b, c))
        else:
            raise ConfigurationError(f"{path}: unknown record tag {tag}")
    if pm is None:
        raise ConfigurationError(f"{path}: no MACKEY record")
    return pm
