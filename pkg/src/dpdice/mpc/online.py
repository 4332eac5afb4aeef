"""Online phase: openings, Beaver multiplication, ZeroTest and the MAC check.

Interactive steps are generators. Each yields an :class:`Exchange` carrying
this party's outgoing values and receives back a list, indexed by CP, of
every party's values for that exchange (its own included). A driver decides
how the exchange travels: :func:`run_lockstep` runs all parties in one thread,
while the protocol layer drives them over a transport.
"""

from __future__ import annotations

import hashlib
import random
import secrets
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Generator, List, Sequence

from ..errors import ConfigurationError, MacCheckError
from .dealer import PartyMaterial
from .field import FieldParams
from .shares import AuthShare, ShareOps, Triple

ZERO_TEST_MODES = ("premul", "beaver")


@dataclass(frozen=True)
class Exchange:
    kind: str  # "reveal", "commit" or "open"
    values: tuple


class CpContext(ShareOps):
    """State of one computation party during a session."""

    def __init__(self, material: PartyMaterial, session: bytes = b"", rng=None):
        super().__init__(material.field, material.index, material.mac_key)
        self.material = material
        self.n_parties = material.n_parties
        self.session = bytes(session)
        self.rng = rng if rng is not None else secrets.SystemRandom()
        self.phase = "online"
        self.rounds: Counter = Counter()
        self._opened_values: list = []
        self._opened_macs: list = []
        self.checked = 0

    def exchange(self, kind: str, values) -> Generator:
        self.rounds[self.phase] += 1
        parts = yield Exchange(kind, tuple(values))
        if len(parts) != self.n_parties:
            raise ConfigurationError(f"exchange returned {len(parts)} parts")
        return parts

    def log_opened(self, values, shares) -> None:
        self._opened_values.extend(values)
        self._opened_macs.extend(s.mac for s in shares)

    @property
    def pending_checks(self) -> int:
        return len(self._opened_values)


def open_values(ctx: CpContext, shares: Sequence[AuthShare]) -> Generator:
    """Broadcast value shares and reconstruct; MACs are checked later."""
    parts = yield from ctx.exchange("reveal", [s.value for s in shares])
    p = ctx.p
    values = [sum(col) % p for col in zip(*parts)] if shares else []
    ctx.log_opened(values, shares)
    return values


def _coefficients(ctx: CpContext, values: Sequence[int]) -> List[int]:
    h = hashlib.sha256(b"dpdice-mac-check")
    h.update(ctx.session)
    h.update(len(values).to_bytes(8, "little"))
    for v in values:
        h.update(v.to_bytes(16, "little"))
    coin = random.Random(h.digest())
    p = ctx.p
    return [coin.randrange(p) for _ in values]


def _commit(sigma: int, nonce: int) -> tuple:
    d = hashlib.sha256(sigma.to_bytes(16, "little") + nonce.to_bytes(16, "little")).digest()
    return int.from_bytes(d[:16], "little"), int.from_bytes(d[16:], "little")


def mac_check(ctx: CpContext) -> Generator:
    """Batched MAC check of every value opened since the last check.

    Each CP computes sigma_j = sum_k rho_k (m_j^(k) - x_k delta_j) with public
    coefficients rho derived from the opened transcript, commits to sigma_j,
    then opens. Raises MacCheckError on a bad opening or nonzero sum.
    """
    values, macs = ctx._opened_values, ctx._opened_macs
    ctx._opened_values, ctx._opened_macs = [], []
    p, dj = ctx.p, ctx.mac_key
    rho = _coefficients(ctx, values)
    sigma = sum(r * (m - x * dj) for r, x, m in zip(rho, values, macs)) % p
    nonce = ctx.rng.getrandbits(128)
    commits = yield from ctx.exchange("commit", _commit(sigma, nonce))
    opens = yield from ctx.exchange("open", (sigma, nonce))
    ctx.checked += len(values)
    for j, ((s, n), c) in enumerate(zip(opens, commits)):
        if _commit(s, n) != tuple(c):
            raise MacCheckError(f"CP {j} opened a sigma that does not match its commitment")
    if sum(s for s, _ in opens) % p:
        raise MacCheckError("MAC check failed: opened values were tampered with")


def reveal_checked(ctx: CpContext, shares: Sequence[AuthShare]) -> Generator:
    """Open ``shares`` and MAC-check everything opened so far."""
    values = yield from open_values(ctx, shares)
    yield from mac_check(ctx)
    return values


def mul_shares(ctx: CpContext, xs: Sequence[AuthShare], ys: Sequence[AuthShare],
               triples: Sequence[Triple]) -> Generator:
    """Beaver multiplication of pairs (x_i, y_i), batched into one round."""
    if not (len(xs) == len(ys) == len(triples)):
        raise ConfigurationError("mul_shares needs one triple per pair")
    used = [t.consume() for t in triples]
    masked = [ctx.sub(x, t.a) for x, t in zip(xs, used)]
    masked += [ctx.sub(y, t.b) for y, t in zip(ys, used)]
    opened = yield from open_values(ctx, masked)
    n = len(xs)
    out = []
    for i, t in enumerate(used):
        eps, dlt = opened[i], opened[n + i]
        # xy = c + eps*b + dlt*a + eps*dlt
        out.append(ctx.lincomb((1, eps, dlt), (t.c, t.b, t.a), eps * dlt))
    return out


# ---------------------------------------------------------------- lookup

@dataclass(frozen=True)
class LookupPolynomial:
    coefficients: tuple  # beta_0..beta_D
    domain_size: int
    p: int

    def __call__(self, x: int) -> int:
        acc = 0
        for b in reversed(self.coefficients):
            acc = (acc * x + b) % self.p
        return acc


def _poly_mul_linear(poly: list, root: int, p: int) -> list:
    # poly * (x - root)
    out = [0] * (len(poly) + 1)
    for i, c in enumerate(poly):
        out[i + 1] = (out[i + 1] + c) % p
        out[i] = (out[i] - root * c) % p
    return out


@lru_cache(maxsize=32)
def _lookup_cached(domain_size: int, p: int) -> LookupPolynomial:
    xs = list(range(1, domain_size + 2))
    ys = [0] + [1] * domain_size
    coeffs = [0] * len(xs)
    for i, (xi, yi) in enumerate(zip(xs, ys)):
        if yi == 0:
            continue
        basis, denom = [1], 1
        for k, xk in enumerate(xs):
            if k != i:
                basis = _poly_mul_linear(basis, xk, p)
                denom = denom * (xi - xk) % p
        scale = yi * pow(denom, -1, p) % p
        coeffs = [(c + scale * b) % p for c, b in zip(coeffs, basis)]
    return LookupPolynomial(tuple(coeffs), domain_size, p)


def interpolate_lookup(domain_size: int, field) -> LookupPolynomial:
    """Polynomial of degree <= D with phi(1) = 0 and phi(2..D+1) = 1."""
    p = field.p if isinstance(field, FieldParams) else int(field)
    if domain_size < 1 or domain_size + 1 >= p:
        raise ConfigurationError("need 1 <= D and D + 1 < p")
    return _lookup_cached(domain_size, p)


# ---------------------------------------------------------------- zero test

def _signed_bits_sum(ctx: CpContext, r: int, shares) -> AuthShare:
    # sum_t (1 - 2 r_t) * share_t
    v = m = 0
    for t, s in enumerate(shares):
        if (r >> t) & 1:
            v -= s.value
            m -= s.mac
        else:
            v += s.value
            m += s.mac
    p = ctx.p
    return AuthShare(v % p, m % p)


def zero_test(ctx: CpContext, xs: Sequence[AuthShare], mode: str = "premul") -> Generator:
    """Shares of b_i = [x_i != 0] for every x_i, batched.

    Each instance masks x with a random a given by its bits, opens r = a + x,
    derives the Hamming distance h between r and a, opens
    gamma = R^-1 (1 + h) and evaluates the lookup polynomial at
    gamma * R = 1 + h through the shared powers of R. In ``premul`` mode the
    dealer's R^-1 * a_t products make gamma linear, so the whole batch costs
    two rounds; ``beaver`` mode uses a triple and one extra round.
    """
    if mode not in ZERO_TEST_MODES:
        raise ConfigurationError(f"zero-test mode must be one of {ZERO_TEST_MODES}")
    n = len(xs)
    if n == 0:
        return []
    p, L = ctx.p, ctx.field.bits
    mat = ctx.material
    bundles = mat.take("rand2", n)
    chains = mat.take("expchain", n)
    triples = mat.take("triples", n) if mode == "beaver" else None
    D = len(chains[0].powers)
    if D < L:
        raise ConfigurationError(f"exp chains of length {D} cannot cover Hamming distances up to {L}")
    if mode == "premul" and len(chains[0].products) != L:
        raise ConfigurationError("premul zero test needs R^-1 * a_t products in the chains")
    pow2 = [1 << t for t in range(L)]

    masked = [ctx.add(x, ctx.lincomb(pow2, bits)) for x, bits in zip(xs, bundles)]
    rs = yield from open_values(ctx, masked)

    if mode == "premul":
        gsh = []
        for r, ch in zip(rs, chains):
            s = _signed_bits_sum(ctx, r, ch.products)
            k = 1 + bin(r).count("1")
            gsh.append(AuthShare((s.value + k * ch.inverse.value) % p,
                                 (s.mac + k * ch.inverse.mac) % p))
    else:
        one_plus_h = []
        for r, bits in zip(rs, bundles):
            one_plus_h.append(ctx.add_public(_signed_bits_sum(ctx, r, bits), 1 + bin(r).count("1")))
        gsh = yield from mul_shares(ctx, [ch.inverse for ch in chains], one_plus_h, triples)
    gammas = yield from open_values(ctx, gsh)

    beta = interpolate_lookup(D, p).coefficients
    out = []
    for g, ch in zip(gammas, chains):
        coeffs, gt = [], 1
        for t in range(1, D + 1):
            gt = gt * g % p
            coeffs.append(beta[t] * gt % p)
        out.append(ctx.lincomb(coeffs, ch.powers, beta[0]))
    return out


# ---------------------------------------------------------------- inputs

def input_masks(ctx: CpContext, count: int):
    """CP side of input sharing: consume ``count`` Rand items.

    Returns the items (kept by the CP) and the value shares a_j to send to the
    data holder.
    """
    items = ctx.material.take("rand", count)
    return items, [s.value for s in items]


def mask_inputs(field: FieldParams, xs: Sequence[int], mask_parts: Sequence[Sequence[int]]) -> list:
    """Data-holder side: x - a for each input, where a = sum of the CPs' parts."""
    p = field.p
    return [(x - sum(col)) % p for x, col in zip(xs, zip(*mask_parts))]


def accept_inputs(ctx: CpContext, items: Sequence[AuthShare], masked: Sequence[int]) -> list:
    """CP side: [[x]] = [[a]] + (x - a)."""
    if len(items) != len(masked):
        raise ConfigurationError("masked input count does not match the mask items")
    return [ctx.add_public(a, d) for a, d in zip(items, masked)]


def dh_input_share(contexts: Sequence[CpContext], xs: Sequence[int]) -> list:
    """Run input sharing in-process; returns per-CP lists of shares."""
    taken = [input_masks(ctx, len(xs)) for ctx in contexts]
    masked = mask_inputs(contexts[0].field, [x % contexts[0].p for x in xs],
                         [parts for _, parts in taken])
    return [accept_inputs(ctx, items, masked) for ctx, (items, _) in zip(contexts, taken)]


# ---------------------------------------------------------------- drivers

def run_lockstep(programs: Sequence[Generator]) -> list:
    """Drive one generator per CP in lockstep; returns their results.

    Every party must issue the same sequence of exchanges. An exception
    raised by any party propagates.
    """
    n = len(programs)
    results = [None] * n
    live = [True] * n
    replies = [None] * n
    while True:
        requests = [None] * n
        for j, prog in enumerate(programs):
            if not live[j]:
                continue
            try:
                requests[j] = prog.send(replies[j]) if replies[j] is not None else next(prog)
            except StopIteration as stop:
                results[j] = stop.value
                live[j] = False
        if not any(live):
            return results
        if not all(live):
            raise ConfigurationError("parties diverged: some finished while others wait")
        kinds = {r.kind for r in requests}
        if len(kinds) != 1:
            raise ConfigurationError(f"parties diverged on exchange kinds {kinds}")
        parts = [list(r.values) for r in requests]
        replies = [parts] * n
