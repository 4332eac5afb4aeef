"""Prime-field arithmetic.

Shares are carried as plain Python ints reduced mod p; :class:`FieldElement`
wraps a value with its field for API-level arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigurationError

DEFAULT_LAMBDA = 40
DEFAULT_TAU = 32

_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)


def is_prime(n: int) -> bool:
    """Miller-Rabin with the first 13 prime bases.

    Deterministic below 3.3e24, which covers the default 73-bit modulus;
    a strong probable-prime test beyond that.
    """
    if n < 2:
        return False
    for q in _MR_BASES:
        if n % q == 0:
            return n == q
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def next_prime(n: int) -> int:
    """Smallest prime >= n."""
    n = max(n, 2)
    if n > 2 and n % 2 == 0:
        n += 1
    while not is_prime(n):
        n += 1 if n == 2 else 2
    return n


@dataclass(frozen=True)
class FieldParams:
    p: int
    lam: int = DEFAULT_LAMBDA
    tau: int = DEFAULT_TAU

    def __post_init__(self):
        if not is_prime(self.p):
            raise ConfigurationError(f"modulus {self.p} is not prime")

    @classmethod
    def default(cls, lam: int = DEFAULT_LAMBDA, tau: int = DEFAULT_TAU) -> "FieldParams":
        return cls(next_prime(1 << (lam + tau)), lam, tau)

    @property
    def bits(self) -> int:
        """L = ceil(log2 p)."""
        return (self.p - 1).bit_length()

    @property
    def nbytes(self) -> int:
        return (self.p.bit_length() + 7) // 8

    def __call__(self, value: int) -> "FieldElement":
        return FieldElement(value % self.p, self)

    def encode(self, v: int) -> int:
        """Map a signed integer into [0, p)."""
        if 2 * abs(v) >= self.p:
            raise ConfigurationError(f"|{v}| does not fit below p/2")
        return v % self.p

    def lift(self, x: int) -> int:
        """Centered representative: x if x < p/2 else x - p."""
        x %= self.p
        return x if 2 * x < self.p else x - self.p

    def inv(self, x: int) -> int:
        x %= self.p
        if x == 0:
            raise ZeroDivisionError("zero has no inverse in F_p")
        return pow(x, -1, self.p)

    def random(self, rng) -> int:
        return rng.randrange(self.p)

    def random_nonzero(self, rng) -> int:
        return 1 + rng.randrange(self.p - 1)


class FieldElement:
    __slots__ = ("value", "field")

    def __init__(self, value: int, field: FieldParams):
        self.value = value % field.p
        self.field = field

    def _coerce(self, other) -> int:
        if isinstance(other, FieldElement):
            if other.field.p != self.field.p:
                raise ConfigurationError("operands live in different fields")
            return other.value
        if isinstance(other, int):
            return other
        return NotImplemented

    def _wrap(self, v: int) -> "FieldElement":
        return FieldElement(v, self.field)

    def __add__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is NotImplemented else self._wrap(self.value + o)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is NotImplemented else self._wrap(self.value - o)

    def __rsub__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is NotImplemented else self._wrap(o - self.value)

    def __mul__(self, other):
        o = self._coerce(other)
        return NotImplemented if o is NotImplemented else self._wrap(self.value * o)

    __rmul__ = __mul__

    def __neg__(self):
        return self._wrap(-self.value)

    def inv(self) -> "FieldElement":
        return self._wrap(self.field.inv(self.value))

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return self._wrap(self.value * self.field.inv(o))

    def __pow__(self, k: int):
        if k < 0:
            return self.inv() ** (-k)
        return self._wrap(pow(self.value, k, self.field.p))

    def __eq__(self, other):
        if isinstance(other, FieldElement):
            return self.field.p == other.field.p and self.value == other.value
        if isinstance(other, int):
            return self.value == other % self.field.p
        return NotImplemented

    def __hash__(self):
        return hash((self.value, self.field.p))

    def __int__(self):
        return self.value

    def lift(self) -> int:
        return self.field.lift(self.value)

    def __repr__(self):
        return f"FieldElement({self.value})"
