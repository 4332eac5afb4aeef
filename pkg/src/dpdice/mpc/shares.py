"""Authenticated additive shares and the purely local operations on them."""

from __future__ import annotations

from typing import NamedTuple, Sequence

from ..errors import MaterialReuse
from .field import FieldParams


class AuthShare(NamedTuple):
    """One party's piece of a shared x: value and MAC share, both in [0, p)."""

    value: int
    mac: int


class Triple:
    """One party's share of a Beaver triple (a, b, ab); usable once."""

    __slots__ = ("a", "b", "c", "used")

    def __init__(self, a: AuthShare, b: AuthShare, c: AuthShare):
        self.a, self.b, self.c = a, b, c
        self.used = False

    def consume(self) -> "Triple":
        if self.used:
            raise MaterialReuse("Beaver triple already consumed")
        self.used = True
        return self


class ExpChain(NamedTuple):
    """Shares of R^-1, R^1..R^D for a random nonzero R.

    ``products`` optionally holds shares of R^-1 * a_t for the bits a_t of
    the companion bit bundle, letting ZeroTest skip a multiplication round.
    """

    inverse: AuthShare
    powers: tuple  # powers[t-1] shares R^t
    products: tuple = ()


class ShareOps:
    """Local arithmetic for the CP at ``index`` (0-based) holding MAC key share ``mac_key``."""

    def __init__(self, field: FieldParams, index: int, mac_key: int):
        self.field = field
        self.p = field.p
        self.index = index
        self.mac_key = mac_key % field.p

    def add(self, x: AuthShare, y: AuthShare) -> AuthShare:
        p = self.p
        return AuthShare((x.value + y.value) % p, (x.mac + y.mac) % p)

    def sub(self, x: AuthShare, y: AuthShare) -> AuthShare:
        p = self.p
        return AuthShare((x.value - y.value) % p, (x.mac - y.mac) % p)

    def neg(self, x: AuthShare) -> AuthShare:
        p = self.p
        return AuthShare(-x.value % p, -x.mac % p)

    def add_public(self, x: AuthShare, k: int) -> AuthShare:
        # only the first CP moves its value share; everyone shifts the MAC by k * delta_j
        p = self.p
        v = (x.value + k) % p if self.index == 0 else x.value
        return AuthShare(v, (x.mac + k * self.mac_key) % p)

    def mul_public(self, x: AuthShare, k: int) -> AuthShare:
        p = self.p
        return AuthShare(x.value * k % p, x.mac * k % p)

    def public(self, k: int) -> AuthShare:
        """Share of a public constant."""
        return self.add_public(AuthShare(0, 0), k)

    def sum(self, xs: Sequence[AuthShare]) -> AuthShare:
        p = self.p
        return AuthShare(sum(s.value for s in xs) % p, sum(s.mac for s in xs) % p)

    def lincomb(self, coeffs: Sequence[int], xs: Sequence[AuthShare], const: int = 0) -> AuthShare:
        """Share of const + sum_i coeffs[i] * x_i."""
        p = self.p
        v = sum(k * s.value for k, s in zip(coeffs, xs))
        m = sum(k * s.mac for k, s in zip(coeffs, xs))
        return self.add_public(AuthShare(v % p, m % p), const)


def reconstruct(shares: Sequence[AuthShare], p: int) -> int:
    return sum(s.value for s in shares) % p


def reconstruct_mac(shares: Sequence[AuthShare], p: int) -> int:
    return sum(s.mac for s in shares) % p
