"""Discrete Gaussian sampling and differential-privacy accounting.

Conventions: a mechanism that is "eps_cdp"-CDP satisfies
(1/2) eps_cdp^2-concentrated DP; ``cdp_to_dp`` converts that to an
(eps, delta)-DP guarantee. ``epsilon_d`` is the CDP parameter of adding the
sum of ``d`` independent discrete Gaussians of scale ``sigma`` to a
statistic with the given sensitivity.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import InvalidParameter

SIGMA_MIN = 0.5
SIGMA_MAX = 1e6


class Statistic(str, enum.Enum):
    FMS_Z = "FMS_Z"
    FM_ZSTAR = "FM_ZSTAR"
    HLL_ZSHARP = "HLL_ZSHARP"


@dataclass(frozen=True)
class Sensitivity:
    value: float
    statistic: Statistic

    @classmethod
    def of(cls, statistic, m: int = 1, w: int = 1) -> "Sensitivity":
        """Add/remove-one-element sensitivity of each sketch statistic.

        FMS zero count moves by at most one bit. FM's Z* can move by w in all
        m rows. One LogLog register moves by at most w - 1, shifting the mean
        register by (w - 1)/m.
        """
        statistic = Statistic(statistic)
        if statistic is Statistic.FMS_Z:
            return cls(1.0, statistic)
        if statistic is Statistic.FM_ZSTAR:
            return cls(float(w * m), statistic)
        return cls((w - 1) / m, statistic)


@dataclass(frozen=True)
class PrivacyBudget:
    eps_dp: float
    delta: float
    d: int
    eps_cdp: float
    sigma: float

    def __post_init__(self):
        if self.eps_dp <= 0 or not 0 < self.delta < 1 or self.d < 1:
            raise InvalidParameter(f"inconsistent budget {self}")


def discrete_gaussian_pmf(sigma: float, support: np.ndarray) -> np.ndarray:
    """Normalized PMF of N_Z(0, sigma^2) on ``support``, summing the series to 20 sigma."""
    bound = int(math.ceil(20 * sigma)) + 1
    xs = np.arange(-bound, bound + 1, dtype=np.float64)
    norm = np.exp(-xs * xs / (2 * sigma * sigma)).sum()
    support = np.asarray(support, dtype=np.float64)
    return np.exp(-support * support / (2 * sigma * sigma)) / norm


def discrete_gaussian_variance(sigma: float) -> float:
    bound = int(math.ceil(20 * sigma)) + 1
    xs = np.arange(-bound, bound + 1, dtype=np.float64)
    wts = np.exp(-xs * xs / (2 * sigma * sigma))
    return float((xs * xs * wts).sum() / wts.sum())


def _discrete_laplace(t: int, rng, size: int) -> np.ndarray:
    # magnitude ~ Geometric(1 - e^{-1/t}) on {0, 1, ...}; drop "-0" to keep symmetry
    q = -math.expm1(-1.0 / t)
    mag = rng.geometric(q, size=size) - 1
    neg = rng.random(size) < 0.5
    keep = ~(neg & (mag == 0))
    return np.where(neg, -mag, mag)[keep]


def sample_discrete_gaussian(sigma: float, rng, size=None):
    """Samples of N_Z(0, sigma^2) by discrete-Laplace rejection.

    Proposal: discrete Laplace with scale t = floor(sigma) + 1, accepted with
    probability exp(-(|y| - sigma^2/t)^2 / (2 sigma^2)). Returns an int if
    ``size`` is None, else an int64 array of that many samples.
    """
    if sigma <= 0:
        raise InvalidParameter("sigma must be positive")
    count = 1 if size is None else int(size)
    t = math.floor(sigma) + 1
    s2 = sigma * sigma
    out = np.empty(count, dtype=np.int64)
    filled = 0
    while filled < count:
        want = count - filled
        batch = max(64, int(want * 1.6) + 16)
        y = _discrete_laplace(t, rng, batch)
        accept_p = np.exp(-((np.abs(y) - s2 / t) ** 2) / (2 * s2))
        y = y[rng.random(y.shape[0]) < accept_p][:want]
        out[filled:filled + y.shape[0]] = y
        filled += y.shape[0]
    return int(out[0]) if size is None else out


def _randbelow(rng, n: int) -> int:
    """Uniform integer in [0, n) for arbitrarily large n."""
    if n < (1 << 62):
        return int(rng.integers(0, n))
    k = n.bit_length()
    nbytes = (k + 7) // 8
    while True:
        v = int.from_bytes(rng.bytes(nbytes), "little") & ((1 << k) - 1)
        if v < n:
            return v


def _bernoulli_exp(gamma: Fraction, rng) -> bool:
    """Exact Bernoulli(exp(-gamma)) for rational gamma >= 0."""
    while gamma > 1:
        if not _bernoulli_exp(Fraction(1), rng):
            return False
        gamma -= 1
    k = 1
    while True:
        # Bernoulli(gamma / k) with exact rational comparison
        if _randbelow(rng, gamma.denominator * k) >= gamma.numerator:
            return k % 2 == 1
        k += 1


def sample_discrete_gaussian_exact(sigma2: Fraction, rng) -> int:
    """One sample of N_Z(0, sigma2) using only integer and rational arithmetic.

    Slow; it exists as a reference for the vectorized sampler.
    """
    sigma2 = Fraction(sigma2)
    if sigma2 <= 0:
        raise InvalidParameter("variance must be positive")
    t = math.isqrt(sigma2.numerator // sigma2.denominator) + 1
    while True:
        # discrete Laplace with scale t
        u = _randbelow(rng, t)
        if not _bernoulli_exp(Fraction(u, t), rng):
            continue
        v = 0
        while _bernoulli_exp(Fraction(1), rng):
            v += 1
        mag = u + t * v
        neg = bool(_randbelow(rng, 2))
        if neg and mag == 0:
            continue
        y = -mag if neg else mag
        gamma = (abs(y) - sigma2 / t) ** 2 / (2 * sigma2)
        if _bernoulli_exp(gamma, rng):
            return y


def tau_d(sigma: float, d: int) -> float:
    return 10.0 * sum(math.exp(-2.0 * k * math.pi ** 2 * sigma ** 2 / (k + 1))
                      for k in range(1, d))


def epsilon_d(sigma: float, d: int, sensitivity: float = 1.0) -> float:
    """CDP parameter of the sum of d discrete Gaussians of scale sigma."""
    if sigma < SIGMA_MIN:
        raise InvalidParameter(f"sigma={sigma} below {SIGMA_MIN}; bound does not apply")
    if d < 1:
        raise InvalidParameter("d must be >= 1")
    tau = tau_d(sigma, d)
    delta = abs(sensitivity)
    return min(math.sqrt(delta * delta / (d * sigma * sigma) + tau / 2),
               delta / (math.sqrt(d) * sigma) + tau)


def cdp_to_dp(eps_cdp: float, delta: float) -> float:
    """Closed-form (eps, delta)-DP bound for a (1/2) eps_cdp^2-CDP mechanism."""
    if eps_cdp <= 0 or not 0 < delta < 1:
        raise InvalidParameter("need eps_cdp > 0 and 0 < delta < 1")
    return 0.5 * eps_cdp * (eps_cdp + 2.0 * math.sqrt(-2.0 * math.log(delta)))


def cdp_to_dp_tight(eps_cdp: float, delta: float) -> float:
    """Infimum over Renyi orders alpha > 1 of the CDP-to-DP conversion."""
    if eps_cdp <= 0 or not 0 < delta < 1:
        raise InvalidParameter("need eps_cdp > 0 and 0 < delta < 1")
    rho = 0.5 * eps_cdp * eps_cdp

    def objective(log_am1):
        a = 1.0 + math.exp(log_am1)
        return rho * a + math.log(1.0 / (a * delta)) / (a - 1.0) + math.log1p(-1.0 / a)

    res = minimize_scalar(objective, bounds=(-30.0, 30.0), method="bounded",
                          options={"xatol": 1e-10})
    return min(float(res.fun), cdp_to_dp(eps_cdp, delta))


def calibrate_sigma(eps_dp_target: float, delta: float, d: int) -> PrivacyBudget:
    """Smallest per-contributor sigma meeting the (eps, delta)-DP target.

    The released statistic has sensitivity 1 (the FMS zero count).
    """
    if eps_dp_target <= 0 or d < 1:
        raise InvalidParameter("need eps_dp_target > 0 and d >= 1")

    def ok(sigma):
        return cdp_to_dp(epsilon_d(sigma, d), delta) <= eps_dp_target

    if not ok(SIGMA_MAX):
        raise InvalidParameter(f"target eps={eps_dp_target} unreachable at sigma={SIGMA_MAX:g}")
    lo, hi = SIGMA_MIN, SIGMA_MAX
    if ok(lo):
        hi = lo
    while hi - lo > 1e-7 * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return PrivacyBudget(eps_dp_target, delta, d, epsilon_d(hi, d), hi)


def central_gaussian_sigma(sensitivity: float, eps_dp_target: float, delta: float) -> float:
    """Scale of a single central Gaussian meeting the target via the closed-form bound."""
    if sensitivity <= 0 or eps_dp_target <= 0 or not 0 < delta < 1:
        raise InvalidParameter("all parameters must be positive, delta < 1")
    s = math.sqrt(-2.0 * math.log(delta))
    eps_c = -s + math.sqrt(s * s + 2.0 * eps_dp_target)
    return sensitivity / eps_c
